"""Traffic matrices and per-flow packet processes.

Every (src, dst) pair carries one flow.  Its average bandwidth is drawn as
``U(0.1, 1) * TI / (N - 1)``; packets arrive as a Poisson process whose rate
is chosen so the offered load in bits matches that bandwidth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

TI_MIN, TI_MAX = 400.0, 2000.0


@dataclass(frozen=True)
class Bimodal:
    """Two packet sizes in bits, the small one drawn with probability ``p_small``."""

    small: float = 400.0
    large: float = 12000.0
    p_small: float = 0.8

    @property
    def mean(self) -> float:
        return self.p_small * self.small + (1.0 - self.p_small) * self.large

    @property
    def minimum(self) -> float:
        return self.small if self.p_small > 0 else self.large

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        return np.where(u < self.p_small, self.small, self.large)


@dataclass(frozen=True)
class Exponential:
    mean: float = 1.0

    @property
    def minimum(self) -> float:
        return 0.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # sizes must stay strictly positive
        u = rng.random(n)
        return -self.mean * np.log1p(-u) + np.finfo(float).tiny


@dataclass(frozen=True)
class Fixed:
    size: float = 1.0

    @property
    def mean(self) -> float:
        return self.size

    @property
    def minimum(self) -> float:
        return self.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.size))


SizeDist = Union[Bimodal, Exponential, Fixed]


@dataclass(frozen=True)
class FlowSpec:
    rate_bits: float
    tos: int = 0
    sizes: SizeDist = field(default_factory=Bimodal)

    @property
    def packet_rate(self) -> float:
        return self.rate_bits / self.sizes.mean


@dataclass(frozen=True, eq=False)
class TrafficMatrix:
    """Average bandwidth per (src, dst) in an ``N x N`` array with a zero diagonal."""

    rates: np.ndarray
    ti: float

    @property
    def n_nodes(self) -> int:
        return self.rates.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrafficMatrix):
            return NotImplemented
        return self.ti == other.ti and np.array_equal(self.rates, other.rates)

    def entries(self) -> dict[tuple[int, int], float]:
        n = self.n_nodes
        return {(s, d): float(self.rates[s, d]) for s in range(n) for d in range(n) if s != d}


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator) or hasattr(rng, "uniform"):
        return rng
    return np.random.default_rng(rng)


def generate_tm(node_count: int, ti: float, rng) -> TrafficMatrix:
    if node_count < 2:
        raise ValueError(f"node_count must be >= 2, got {node_count}")
    if not TI_MIN <= ti <= TI_MAX:
        raise ValueError(f"traffic intensity {ti} outside [{TI_MIN:g}, {TI_MAX:g}]")
    rng = _as_rng(rng)
    draws = np.asarray(rng.uniform(0.1, 1.0, size=(node_count, node_count)), dtype=float)
    rates = draws * ti / (node_count - 1)
    np.fill_diagonal(rates, 0.0)
    return TrafficMatrix(rates, float(ti))


def next_interarrival(flow: FlowSpec, rng: np.random.Generator) -> float:
    lam = flow.packet_rate
    # inverse transform on [0, 1): a zero draw gives a zero gap, never inf
    return -math.log1p(-rng.random()) / lam


def interarrivals(flow: FlowSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` consecutive gaps; the same stream :func:`next_interarrival` would produce."""
    return -np.log1p(-rng.random(n)) / flow.packet_rate


def next_packet_size(flow: FlowSpec, rng: np.random.Generator) -> float:
    return float(flow.sizes.sample(rng, 1)[0])


def flow_rngs(master_seed: int, src: int, dst: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (arrival, size) streams for one flow."""
    return (np.random.default_rng([master_seed, src, dst, 0]),
            np.random.default_rng([master_seed, src, dst, 1]))


def arrival_process(flow: FlowSpec, master_seed: int, src: int, dst: int,
                    horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times in ``[0, horizon)`` and matching packet sizes for one flow."""
    arr_rng, size_rng = flow_rngs(master_seed, src, dst)
    lam = flow.packet_rate
    if lam <= 0:
        return np.empty(0), np.empty(0)
    expected = lam * horizon
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    pieces = []
    t = 0.0
    while t < horizon:
        gaps = interarrivals(flow, arr_rng, chunk)
        times = np.cumsum(np.concatenate(([t], gaps)))[1:]
        pieces.append(times)
        t = float(times[-1])
        chunk = max(64, chunk // 4)
    times = np.concatenate(pieces)
    times = times[times < horizon]
    return times, flow.sizes.sample(size_rng, len(times))


# -- TM files ---------------------------------------------------------------

_TM_MAGIC = "queuenet-tm"


def save_tm(path, tm: TrafficMatrix, tos, seed: int | None = None) -> None:
    n = tm.n_nodes
    lines = [f"# {_TM_MAGIC} ti={tm.ti!r} n={n} seed={'' if seed is None else seed}"]
    for s in range(n):
        for d in range(n):
            if s != d:
                lines.append(f"{s} {d} {float(tm.rates[s, d])!r} {int(tos[s][d])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_tm(path) -> tuple[TrafficMatrix, tuple, int | None]:
    """Returns ``(traffic matrix, tos assignment, seed or None)``."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(f"# {_TM_MAGIC} "):
        raise ValueError(f"{path}: missing TM header")
    header = dict(item.split("=", 1) for item in text[0][len(_TM_MAGIC) + 3:].split())
    n = int(header["n"])
    seed = int(header["seed"]) if header.get("seed") else None
    rates = np.zeros((n, n))
    tos = [[0] * n for _ in range(n)]
    seen = set()
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'src dst bandwidth tos'")
        s, d, bw, t = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
        if s == d or not (0 <= s < n and 0 <= d < n):
            raise ValueError(f"{path}:{lineno}: bad pair {s}->{d}")
        rates[s, d] = bw
        tos[s][d] = t
        seen.add((s, d))
    if len(seen) != n * (n - 1):
        raise ValueError(f"{path}: expected {n * (n - 1)} entries, got {len(seen)}")
    return TrafficMatrix(rates, float(header["ti"])), tuple(tuple(r) for r in tos), seed
