"""Queue/link/path message-passing network that predicts per-path mean delay.

Every queue, link and path carries a hidden vector of size ``H``.  One
iteration of message passing runs three stages:

1. each path walks its (queue, link) sequence with a recurrent cell fed
   ``[h_q, h_l]``; the path state after each element is the message sent
   to that element's queue;
2. each queue sums the messages of all paths through it and updates its
   state with a second recurrent cell;
3. each link runs a third recurrent cell over the new states of its queues
   in priority order and keeps the final state.

Paths read the queue and link states of the current iteration only, so the
stages are order independent.  Everything is batched: a batch of samples is
one disjoint graph, and the variable-length walks are unrolled position by
position with index arrays.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .netgraph import MAX_QUEUES, POLICIES, QUEUE_SIZES, Scenario
from .tensorcore import checkpoint
from .traffic import TI_MAX, TrafficMatrix

QUEUE_FEATURES = 3  # size, priority, weight
# capacity, then one indicator per non-FIFO policy (FIFO is all zeros)
LINK_FEATURES = len(POLICIES)
PATH_FEATURES = 1  # bandwidth


@dataclass(frozen=True)
class FeatureScale:
    """Min-max ranges mapping raw features to [0, 1]."""

    queue_size: tuple[float, float] = (float(min(QUEUE_SIZES)), float(max(QUEUE_SIZES)))
    priority: tuple[float, float] = (0.0, float(MAX_QUEUES - 1))
    weight: tuple[float, float] = (0.0, 1.0)
    capacity: tuple[float, float] = (1000.0, 2000.0)
    bandwidth: tuple[float, float] = (0.0, TI_MAX / 4)

    @staticmethod
    def apply(values, bounds: tuple[float, float]) -> np.ndarray:
        lo, hi = bounds
        values = np.asarray(values, dtype=np.float64)
        if hi <= lo:
            return np.zeros_like(values)
        return (values - lo) / (hi - lo)

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureScale":
        return cls(**{k: tuple(float(x) for x in v) for k, v in doc.items()})


@dataclass(frozen=True)
class TargetScale:
    """Delays are learned as ``(boxcox(y, power) - shift) / scale``.

    ``power`` 0 is the logarithm; larger powers give large delays more
    weight under a squared-error loss.
    """

    shift: float = 0.0
    scale: float = 1.0
    power: float = 0.0

    def _forward(self, y: np.ndarray) -> np.ndarray:
        if self.power == 0.0:
            return np.log(y)
        return np.expm1(self.power * np.log(y)) / self.power

    def encode(self, delay) -> np.ndarray:
        return (self._forward(np.asarray(delay, dtype=np.float64)) - self.shift) / self.scale

    def decode(self, value) -> np.ndarray:
        t = np.asarray(value, dtype=np.float64) * self.scale + self.shift
        if self.power == 0.0:
            return np.exp(t)
        # below the transform's range the delay is clamped at a tiny positive value
        return np.exp(np.log1p(np.maximum(self.power * t, -1.0 + 1e-12)) / self.power)

    @classmethod
    def fit(cls, delays, power: float = 0.0) -> "TargetScale":
        t = cls(power=power)._forward(np.asarray(delays, dtype=np.float64))
        return cls(float(t.mean()), float(max(t.std(), 1e-6)), power)


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    iterations: int = 8
    readout: tuple[int, ...] = (32, 32)
    features: FeatureScale = field(default_factory=FeatureScale)
    target: TargetScale = field(default_factory=TargetScale)
    # feed the summed path messages to the link cell alongside queue states
    link_path_messages: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        widest = max(QUEUE_FEATURES, LINK_FEATURES, PATH_FEATURES)
        if self.hidden < widest:
            raise ValueError(f"hidden size {self.hidden} is smaller than feature width {widest}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["readout"] = list(self.readout)
        doc["features"] = {k: list(v) for k, v in doc["features"].items()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["readout"] = tuple(doc["readout"])
        doc["features"] = FeatureScale.from_dict(doc["features"])
        doc["target"] = TargetScale(**doc["target"])
        return cls(**doc)


@dataclass
class Graph:
    """Index arrays and raw features of one sample or a disjoint batch.

    ``path_steps[s]`` holds ``(paths, queues, links)`` for every path with
    more than ``s`` elements; ``link_steps[s]`` holds ``(links, queues)``
    for every link with more than ``s`` queues, in priority order.
    """

    queue_x: np.ndarray
    link_x: np.ndarray
    path_x: np.ndarray
    path_steps: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    link_steps: list[tuple[np.ndarray, np.ndarray]]
    path_sizes: list[int] = field(default_factory=list)

    @property
    def n_queues(self) -> int:
        return len(self.queue_x)

    @property
    def n_links(self) -> int:
        return len(self.link_x)

    @property
    def n_paths(self) -> int:
        return len(self.path_x)


def _steps(sequences: Sequence[Sequence[tuple]], width: int) -> list[tuple[np.ndarray, ...]]:
    steps = []
    for s in range(max((len(seq) for seq in sequences), default=0)):
        owners = [i for i, seq in enumerate(sequences) if len(seq) > s]
        cols = [np.array([sequences[i][s][c] for i in owners], dtype=np.int64) for c in range(width)]
        steps.append((np.array(owners, dtype=np.int64), *cols))
    return steps


def build_graph(scenario: Scenario, tm: TrafficMatrix, scale: FeatureScale) -> Graph:
    """Normalized features and walk schedules of ``scenario`` under ``tm``."""
    topo = scenario.topology
    if tm.n_nodes != topo.n_nodes:
        raise ValueError(f"traffic matrix has {tm.n_nodes} nodes, scenario has {topo.n_nodes}")
    queues = [q for port in topo.ports for q in port.queues]
    queue_x = np.stack([
        scale.apply([q.size_packets for q in queues], scale.queue_size),
        scale.apply([q.priority for q in queues], scale.priority),
        scale.apply([q.weight for q in queues], scale.weight),
    ], axis=1) if queues else np.zeros((0, QUEUE_FEATURES))
    link_x = np.zeros((len(topo.links), LINK_FEATURES))
    link_x[:, 0] = scale.apply([l.capacity for l in topo.links], scale.capacity)
    for port in topo.ports:
        if port.policy.index:
            link_x[port.link, port.policy.index] = 1.0
    paths = scenario.paths
    path_x = scale.apply([[tm.rates[p.src, p.dst]] for p in paths], scale.bandwidth).reshape(-1, 1)
    link_queues = [[] for _ in topo.links]
    for i, port in enumerate(topo.ports):
        off = topo.queue_offsets[i]
        link_queues[port.link] = [(off + qi,) for qi in port.priority_order()]
    return Graph(queue_x, link_x, path_x,
                 _steps([p.elements for p in paths], 2), _steps(link_queues, 1), [len(paths)])


def batch_graphs(graphs: Sequence[Graph]) -> Graph:
    """Disjoint union; paths keep their per-sample order, sample after sample."""
    if len(graphs) == 1:
        return graphs[0]
    qo = po = lo = 0
    path_steps: list[list] = []
    link_steps: list[list] = []
    for g in graphs:
        for s, (p, q, l) in enumerate(g.path_steps):
            if s == len(path_steps):
                path_steps.append([[], [], []])
            for acc, arr, off in zip(path_steps[s], (p, q, l), (po, qo, lo)):
                acc.append(arr + off)
        for s, (l, q) in enumerate(g.link_steps):
            if s == len(link_steps):
                link_steps.append([[], []])
            for acc, arr, off in zip(link_steps[s], (l, q), (lo, qo)):
                acc.append(arr + off)
        qo, po, lo = qo + g.n_queues, po + g.n_paths, lo + g.n_links
    return Graph(
        np.concatenate([g.queue_x for g in graphs]),
        np.concatenate([g.link_x for g in graphs]),
        np.concatenate([g.path_x for g in graphs]),
        [tuple(np.concatenate(a) for a in step) for step in path_steps],
        [tuple(np.concatenate(a) for a in step) for step in link_steps],
        [n for g in graphs for n in g.path_sizes],
    )


class Model:
    """Parameters of the three recurrent cells and the readout network."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        h = config.hidden
        self.config = config
        self.path_cell = tc.GRUCell(h, 2 * h, rng, "path_rnn")
        self.queue_cell = tc.GRUCell(h, h, rng, "queue_update")
        self.link_cell = tc.GRUCell(h, 2 * h if config.link_path_messages else h, rng, "link_rnn")
        widths = (h, *config.readout)
        self.readout_layers = [tc.Dense(a, b, rng, f"readout{i}")
                               for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.output_layer = tc.Dense(widths[-1], 1, rng, "output")

    def parameters(self) -> list[tc.Parameter]:
        params = self.path_cell.parameters() + self.queue_cell.parameters() + self.link_cell.parameters()
        for layer in self.readout_layers:
            params += layer.parameters()
        return params + self.output_layer.parameters()

    def state_dict(self) -> dict[str, tc.Parameter]:
        return {p.name: p for p in self.parameters()}

    def save(self, path, meta: dict | None = None) -> None:
        checkpoint.save(path, self.parameters(), {"model": self.config.to_dict(), **(meta or {})})

    def dumps(self, meta: dict | None = None) -> bytes:
        return checkpoint.dumps(self.parameters(), {"model": self.config.to_dict(), **(meta or {})})

    @classmethod
    def from_params(cls, params: Sequence[tc.Parameter], meta: dict) -> "Model":
        model = cls(ModelConfig.from_dict(meta["model"]))
        mine = model.state_dict()
        names = [p.name for p in params]
        if sorted(names) != sorted(mine):
            raise checkpoint.CheckpointError("checkpoint parameters do not match the model layout")
        for p in params:
            target = mine[p.name]
            if target.shape != p.shape:
                raise checkpoint.CheckpointError(f"{p.name}: shape {p.shape}, expected {target.shape}")
            target.value, target.m, target.v = p.value.copy(), p.m.copy(), p.v.copy()
        return model

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        params, meta = checkpoint.load(path)
        return cls.from_params(params, meta), meta


def _pad(x: np.ndarray, hidden: int) -> np.ndarray:
    if x.shape[1] > hidden:
        raise tc.ShapeError(f"feature width {x.shape[1]} exceeds hidden size {hidden}")
    out = np.zeros((x.shape[0], hidden))
    out[:, :x.shape[1]] = x
    return out


def init_states(graph: Graph, config: ModelConfig) -> tuple[tc.Tensor, tc.Tensor, tc.Tensor]:
    """Features followed by zeros, for queues, links and paths."""
    h = config.hidden
    return (tc.Tensor(_pad(graph.queue_x, h)), tc.Tensor(_pad(graph.link_x, h)),
            tc.Tensor(_pad(graph.path_x, h)))


def message_pass(states, graph: Graph, model: Model, iterations: int | None = None):
    h_q, h_l, h_p = states
    for _ in range(model.config.iterations if iterations is None else iterations):
        h_q, h_l, h_p = _iteration(h_q, h_l, h_p, graph, model)
    return h_q, h_l, h_p


def _iteration(h_q, h_l, h_p, graph: Graph, model: Model):
    messages, targets, link_targets = [], [], []
    for paths, queues, links in graph.path_steps:
        x = tc.concat([tc.gather(h_q, queues), tc.gather(h_l, links)], axis=1)
        new = model.path_cell(tc.gather(h_p, paths), x)
        h_p = tc.index_update(h_p, paths, new)
        messages.append(new)
        targets.append(queues)
        link_targets.append(links)
    if messages:
        msg = tc.concat(messages, axis=0)
        agg = tc.scatter_add(msg, np.concatenate(targets), graph.n_queues)
    else:
        agg = tc.Tensor(np.zeros(h_q.shape))
    h_q = model.queue_cell(h_q, agg)
    if model.config.link_path_messages:
        link_agg = (tc.scatter_add(msg, np.concatenate(link_targets), graph.n_links) if messages
                    else tc.Tensor(np.zeros(h_l.shape)))
    for links, queues in graph.link_steps:
        x = tc.gather(h_q, queues)
        if model.config.link_path_messages:
            x = tc.concat([x, tc.gather(link_agg, links)], axis=1)
        h_l = tc.index_update(h_l, links, model.link_cell(tc.gather(h_l, links), x))
    return h_q, h_l, h_p


def readout(h_p: tc.Tensor, model: Model) -> tc.Tensor:
    """One value per path row, in the model's target space."""
    x = h_p
    for layer in model.readout_layers:
        x = tc.selu(layer(x))
    return model.output_layer(x)


def forward(graph: Graph, model: Model) -> tc.Tensor:
    """Differentiable ``(n_paths, 1)`` outputs in target space."""
    states = message_pass(init_states(graph, model.config), graph, model)
    return readout(states[2], model)


def predict(scenario: Scenario, tm: TrafficMatrix, model: Model) -> np.ndarray:
    """Per-path mean delay (seconds), ordered like ``scenario.paths``."""
    graph = build_graph(scenario, tm, model.config.features)
    return model.config.target.decode(forward(graph, model).value[:, 0])
