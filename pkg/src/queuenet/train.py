"""Training loop, accuracy metrics and loss-curve export."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gnn
from . import tensorcore as tc
from .dataset import Dataset, Sample, feature_scale

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10_000
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.6
    lr_interval: int = 80_000
    l2_lambda: float = 0.1
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic evaluation

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr < 0 or self.l2_lambda < 0:
            raise ValueError(f"invalid training config {self}")
        if not 0 < self.lr_decay <= 1 or self.lr_interval < 1:
            raise ValueError(f"invalid learning-rate schedule in {self}")

    @property
    def schedule(self) -> tc.StepDecay:
        return tc.StepDecay(self.lr, self.lr_decay, self.lr_interval)


@dataclass(frozen=True)
class Metrics:
    mre: float  # mean of |pred - y| / y over paths
    r2: float
    paths: int
    excluded: int = 0  # labels <= 0 or non-finite, left out

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: gnn.Model
    trace: list[tuple[int, float]]
    evals: list[tuple[int, Metrics]] = field(default_factory=list)

    @property
    def step(self) -> int:
        return self.trace[-1][0] + 1 if self.trace else 0


def metrics(labels, predictions) -> Metrics:
    """Pooled relative error and coefficient of determination.

    Labels that are not strictly positive (or not finite) cannot anchor a
    relative error and are excluded; their count is reported.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError(f"{y.size} labels but {p.size} predictions")
    keep = np.isfinite(y) & (y > 0)
    excluded = int((~keep).sum())
    if excluded:
        log.warning("excluded %d labels that are not positive", excluded)
    y, p = y[keep], p[keep]
    if y.size == 0:
        raise ValueError("no usable labels")
    mre = float(np.mean(np.abs(p - y) / y))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - p) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return Metrics(mre, r2, int(y.size), excluded)


def canonical_order(samples: Sequence[Sample]) -> list[Sample]:
    """Samples sorted by seed, so training does not depend on storage order."""
    return sorted(samples, key=lambda s: s.seed)


def batch_schedule(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices (into the canonical order) of the batch used at ``step``.

    Each epoch is a seeded permutation; a batch never straddles two epochs.
    """
    per_epoch = max(1, -(-n // batch_size))
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return np.sort(perm[pos * batch_size:(pos + 1) * batch_size])


def usable(samples: Sequence[Sample]) -> list[Sample]:
    good = [s for s in samples if np.all(np.isfinite(s.delays)) and np.all(s.delays > 0)]
    if len(good) < len(samples):
        log.warning("skipping %d samples with missing or non-positive labels", len(samples) - len(good))
    return good


def new_model(train_set: Dataset | Sequence[Sample], hidden: int = 32, iterations: int = 8,
              seed: int = 0, target_power: float = 0.0, **kw) -> gnn.Model:
    """Model whose feature and target scaling is fitted to ``train_set``."""
    samples = canonical_order(usable(list(train_set)))
    if not samples:
        raise TrainingError("training set has no usable samples")
    config = gnn.ModelConfig(
        hidden=hidden, iterations=iterations, readout=kw.pop("readout", (hidden, hidden)),
        features=feature_scale(samples),
        target=gnn.TargetScale.fit(np.concatenate([s.delays for s in samples]), target_power), **kw)
    return gnn.Model(config, seed)


def train(train_set: Dataset | Sequence[Sample], config: TrainConfig, model: gnn.Model | None = None,
          start_step: int = 0, eval_set: Dataset | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam on MSE (in the model's target space) plus L2 on weights.

    Passing a model and ``start_step`` resumes: batch order and learning
    rate continue as if training had not stopped.
    """
    samples = canonical_order(usable(list(train_set)))
    if not samples:
        raise TrainingError("training set has no usable samples")
    if model is None:
        model = new_model(samples, seed=config.seed)
    cfg = model.config
    graphs = [gnn.build_graph(s.scenario, s.tm, cfg.features) for s in samples]
    targets = [cfg.target.encode(s.delays)[:, None] for s in samples]
    params = model.parameters()
    trace: list[tuple[int, float]] = []
    evals: list[tuple[int, Metrics]] = []
    for step in range(start_step, start_step + config.steps):
        idx = batch_schedule(len(samples), config.batch_size, config.seed, step)
        graph = gnn.batch_graphs([graphs[i] for i in idx])
        target = np.concatenate([targets[i] for i in idx])
        for p in params:
            p.grad = None
        try:
            data_loss = tc.mse(gnn.forward(graph, model), target)
            tc.backward(data_loss)
            loss = float(data_loss.value) + tc.l2_penalty(params, config.l2_lambda)
            if not np.isfinite(loss):
                raise tc.NonFiniteError("loss is not finite")
            tc.adam_step(params, [p.grad for p in params], config.schedule, config.l2_lambda, step)
        except tc.NonFiniteError as exc:
            seeds = [samples[i].seed for i in idx]
            raise TrainingError(f"step {step}: {exc}; batch sample seeds {seeds}") from None
        trace.append((step, loss))
        if on_step is not None:
            on_step(step, loss)
        if eval_set is not None and config.eval_every and (step + 1) % config.eval_every == 0:
            evals.append((step, evaluate(model, eval_set)))
    return TrainResult(model, trace, evals)


def predict_dataset(model: gnn.Model, samples: Sequence[Sample], batch_size: int = 64) -> list[np.ndarray]:
    """Per-sample predicted delays, computed in batches."""
    cfg = model.config
    out: list[np.ndarray] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        graph = gnn.batch_graphs([gnn.build_graph(s.scenario, s.tm, cfg.features) for s in chunk])
        flat = cfg.target.decode(gnn.forward(graph, model).value[:, 0])
        out += np.split(flat, np.cumsum(graph.path_sizes)[:-1])
    return out


def evaluate(model: gnn.Model, eval_set: Dataset | Sequence[Sample]) -> Metrics:
    samples = list(eval_set)
    if not samples:
        raise ValueError("evaluation set is empty")
    preds = predict_dataset(model, samples)
    return metrics(np.concatenate([s.delays for s in samples]), np.concatenate(preds))


def evaluate_by_tag(model: gnn.Model, eval_set: Dataset | Sequence[Sample]) -> dict[str, Metrics]:
    """Metrics per topology tag plus ``"all"`` pooled over every sample."""
    samples = list(eval_set)
    if not samples:
        raise ValueError("evaluation set is empty")
    preds = predict_dataset(model, samples)
    report = {}
    for tag in sorted({s.tag for s in samples}):
        idx = [i for i, s in enumerate(samples) if s.tag == tag]
        report[tag] = metrics(np.concatenate([samples[i].delays for i in idx]),
                              np.concatenate([preds[i] for i in idx]))
    report["all"] = metrics(np.concatenate([s.delays for s in samples]), np.concatenate(preds))
    return report


# --- loss traces ---

def save_trace(path, trace: Sequence[tuple[int, float]], append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for step, loss in trace:
            fh.write(f"{step} {loss!r}\n")


def load_trace(path) -> list[tuple[int, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            step, loss = line.split()
            out.append((int(step), float(loss)))
    return out


def downsample(trace: Sequence[tuple[int, float]], max_points: int) -> np.ndarray:
    """At most ``max_points`` (step, mean loss) rows from equal-width step bins."""
    arr = np.asarray(trace, dtype=np.float64).reshape(-1, 2)
    if len(arr) <= max_points:
        return arr
    bins = np.array_split(np.arange(len(arr)), max_points)
    return np.array([[arr[b[-1], 0], arr[b, 1].mean()] for b in bins])


def export_loss_curve(trace: Sequence[tuple[int, float]], path, max_points: int = 2000) -> None:
    """Training loss against step on a logarithmic loss axis."""
    if not trace:
        raise ValueError("empty loss trace")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = downsample(trace, max_points)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(pts[:, 0], pts[:, 1], lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("training step")
    ax.set_ylabel("loss")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    try:
        fig.savefig(path)
    finally:
        plt.close(fig)
