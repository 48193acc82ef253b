"""Labelled samples: random scenarios, their traffic, and simulated per-path delays.

Dataset file layout (little endian)::

    b"QNDS" | u16 version | u32 sample count | records...
    record = u32 payload length | payload
    payload = u32 meta length | meta (UTF-8 JSON) | float64 arrays

The record meta holds the scenario document, the sample seed and tag; the
arrays are the ``N x N`` traffic matrix followed by per-path delay, sent,
delivered and dropped counts.  A JSON manifest sidecar (``<file>.json``)
records how the samples were produced and the feature ranges seen.
"""
from __future__ import annotations

import json
import multiprocessing
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .gnn import FeatureScale
from .netgraph import (Scenario, TopologyError, matches_known, randomize_scenario, random_scenario,
                       topology_from_dict, topology_to_dict, load_topology, validate_scenario)
from .simulator import run
from .traffic import TI_MAX, TI_MIN, Bimodal, TrafficMatrix, generate_tm

MAGIC = b"QNDS"
VERSION = 1
MANIFEST_SUFFIX = ".json"
MAX_ATTEMPTS = 20  # regenerations allowed per sample before giving up


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Sample:
    scenario: Scenario
    tm: TrafficMatrix
    delays: np.ndarray  # per-path mean delay, ordered like scenario.paths
    sent: np.ndarray
    delivered: np.ndarray
    dropped: np.ndarray
    seed: int
    tag: str = ""

    @property
    def loss(self) -> float:
        total = int(self.sent.sum())
        return float(self.dropped.sum()) / total if total else 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.scenario == other.scenario and self.tm == other.tm
                and self.seed == other.seed and self.tag == other.tag
                and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True)
                        for a in ("delays", "sent", "delivered", "dropped")))


@dataclass(eq=True)
class Dataset:
    samples: list[Sample]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        seeds = [s.seed for s in self.samples]
        if len(set(seeds)) != len(seeds):
            raise DatasetError("duplicate sample seeds")
        declared = self.manifest.get("count")
        if declared is not None and declared != len(self.samples):
            raise DatasetError(f"manifest declares {declared} samples, found {len(self.samples)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]


# --- generation ---

def parse_source(source: str) -> tuple[str, object]:
    """``random:N``, ``random:A-B`` or a topology file path."""
    m = re.fullmatch(r"random:(\d+)(?:-(\d+))?", source)
    if m:
        lo = int(m.group(1))
        hi = int(m.group(2) or lo)
        if lo < 2 or hi < lo:
            raise ValueError(f"bad node range in {source!r}")
        return "random", (lo, hi)
    if source.startswith("random"):
        raise ValueError(f"bad topology source {source!r}, expected random:N or random:A-B")
    try:
        topology, next_hop, _ = load_topology(source)
    except OSError as exc:
        raise DatasetError(f"cannot read topology {source}: {exc}") from None
    tag = matches_known(topology) or Path(source).stem
    return "file", (topology, next_hop, tag)


def derive_seed(master_seed: int, index: int, attempt: int) -> int:
    return int(np.random.SeedSequence([master_seed, index, attempt]).generate_state(1, np.uint64)[0])


def build_sample(kind: str, spec, ti_range: tuple[float, float], seed: int) -> Sample:
    rng = np.random.default_rng(seed)
    if kind == "random":
        n = int(rng.integers(spec[0], spec[1] + 1))
        scenario = random_scenario(n, rng)
        tag = f"random{n}"
    else:
        topology, next_hop, tag = spec
        n = topology.n_nodes
        scenario = randomize_scenario(topology.links, n, rng, next_hop)
    tm = generate_tm(n, float(rng.uniform(*ti_range)), rng)
    res = run(scenario, tm, seed=seed)
    return Sample(scenario, tm, res.mean_delay, res.sent, res.delivered, res.dropped, seed, tag)


def _generate_one(args) -> tuple[Sample, int]:
    kind, spec, ti_range, master_seed, index = args
    for attempt in range(MAX_ATTEMPTS):
        sample = build_sample(kind, spec, ti_range, derive_seed(master_seed, index, attempt))
        if np.all(sample.delivered > 0):
            return sample, attempt
    raise DatasetError(f"sample {index}: no complete simulation after {MAX_ATTEMPTS} attempts")


def generate(topology_source: str, count: int, ti_range: Sequence[float] = (TI_MIN, TI_MAX),
             master_seed: int = 0, workers: int = 1) -> Dataset:
    """Simulate ``count`` random samples; incomplete ones are redrawn with a fresh seed."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    lo, hi = (float(x) for x in ti_range)
    if not TI_MIN <= lo <= hi <= TI_MAX:
        raise ValueError(f"TI range [{lo}, {hi}] not within [{TI_MIN:g}, {TI_MAX:g}]")
    kind, spec = parse_source(topology_source)
    jobs = [(kind, spec, (lo, hi), master_seed, i) for i in range(count)]
    if workers > 1 and count > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            results = pool.map(_generate_one, jobs, chunksize=max(1, count // (8 * workers)))
    else:
        results = [_generate_one(job) for job in jobs]
    samples = [s for s, _ in results]
    manifest = {
        "generator": f"queuenet {__version__}",
        "topology_source": topology_source,
        "count": count,
        "ti_range": [lo, hi],
        "master_seed": master_seed,
        "seeds": [s.seed for s in samples],
        "regenerated": int(sum(a for _, a in results)),
        "features": feature_ranges(samples),
    }
    return Dataset(samples, manifest)


def feature_ranges(samples: Sequence[Sample]) -> dict:
    """Min-max constants of the raw model features over ``samples``."""
    if not samples:
        return {}
    queues = [q for s in samples for p in s.scenario.topology.ports for q in p.queues]
    caps = [l.capacity for s in samples for l in s.scenario.topology.links]
    bws = [s.tm.rates[p.src, p.dst] for s in samples for p in s.scenario.paths]

    def span(values):
        return [float(np.min(values)), float(np.max(values))]

    return {
        "queue_size": span([q.size_packets for q in queues]),
        "priority": span([q.priority for q in queues]),
        "weight": span([q.weight for q in queues]),
        "capacity": span(caps),
        "bandwidth": span(bws),
    }


def feature_scale(samples: Sequence[Sample]) -> FeatureScale:
    return FeatureScale.from_dict(feature_ranges(samples))


def delay_floor(sample: Sample) -> np.ndarray:
    """Per-path lower bound: smallest packet's transmission time summed over hops."""
    caps = np.array([l.capacity for l in sample.scenario.topology.links])
    smallest = Bimodal().minimum
    return np.array([sum(smallest / caps[l] for l in p.links) for p in sample.scenario.paths])


def split(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random partition; the first part holds ``round(fraction * len)`` samples."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(fraction * len(dataset)))
    parts = []
    for name, idx in (("train", sorted(order[:cut])), ("eval", sorted(order[cut:]))):
        samples = [dataset.samples[i] for i in idx]
        manifest = {**dataset.manifest, "count": len(samples), "seeds": [s.seed for s in samples],
                    "split": {"part": name, "fraction": fraction, "seed": seed}}
        parts.append(Dataset(samples, manifest))
    return parts[0], parts[1]


# --- serialization ---

def _encode_sample(sample: Sample) -> bytes:
    sc = sample.scenario
    meta = {
        "scenario": topology_to_dict(sc.topology, sc.next_hop, sc.tos),
        "seed": sample.seed,
        "tag": sample.tag,
        "ti": sample.tm.ti,
        "paths": len(sample.delays),
    }
    head = json.dumps(meta, sort_keys=True).encode()
    arrays = [sample.tm.rates, sample.delays, sample.sent, sample.delivered, sample.dropped]
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return struct.pack("<I", len(head)) + head + body


def _decode_sample(buf: bytes, base: int) -> Sample:
    try:
        (head_len,) = struct.unpack_from("<I", buf, 0)
        meta = json.loads(buf[4:4 + head_len])
        topology, next_hop, tos = topology_from_dict(meta["scenario"])
    except (struct.error, ValueError, KeyError, TopologyError) as exc:
        raise DatasetError(f"bad record header at byte {base}: {exc}") from None
    n, k = topology.n_nodes, int(meta["paths"])
    off = 4 + head_len
    need = 8 * (n * n + 4 * k)
    if len(buf) - off != need:
        raise DatasetError(f"record at byte {base}: {len(buf) - off} array bytes, expected {need}")
    flat = np.frombuffer(buf, dtype="<f8", offset=off).astype(np.float64)
    rates = flat[:n * n].reshape(n, n).copy()
    rest = flat[n * n:].reshape(4, k)
    return Sample(Scenario(topology, next_hop, tos), TrafficMatrix(rates, float(meta["ti"])),
                  rest[0].copy(), rest[1].astype(np.int64), rest[2].astype(np.int64),
                  rest[3].astype(np.int64), int(meta["seed"]), meta["tag"])


def dumps(dataset: Dataset) -> bytes:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(dataset.samples))]
    for sample in dataset.samples:
        payload = _encode_sample(sample)
        chunks += [struct.pack("<I", len(payload)), payload]
    return b"".join(chunks)


def loads(data: bytes, manifest: dict | None = None) -> Dataset:
    if len(data) < 10 or data[:4] != MAGIC:
        raise DatasetError("bad magic at byte 0: not a dataset file")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise DatasetError(f"unsupported dataset version {version} (expected {VERSION})")
    off = 10
    samples = []
    for i in range(count):
        if off + 4 > len(data):
            raise DatasetError(f"truncated file at byte {off}: record {i} of {count} missing")
        (size,) = struct.unpack_from("<I", data, off)
        if off + 4 + size > len(data):
            raise DatasetError(f"truncated record {i} at byte {off}")
        samples.append(_decode_sample(data[off + 4:off + 4 + size], off))
        off += 4 + size
    if off != len(data):
        raise DatasetError(f"trailing bytes at byte {off}")
    return Dataset(samples, manifest if manifest is not None else {"count": count})


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + MANIFEST_SUFFIX)


def write(dataset: Dataset, path) -> None:
    path = Path(path)
    path.write_bytes(dumps(dataset))
    manifest = {**dataset.manifest, "count": len(dataset)}
    manifest_path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read(path) -> Dataset:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None
    side = manifest_path(path)
    manifest = json.loads(side.read_text()) if side.exists() else None
    return loads(data, manifest)


def check_sample(sample: Sample) -> list[str]:
    """Problems that make a sample unusable for training (empty when fine)."""
    problems = [str(v) for v in validate_scenario(sample.scenario)]
    if len(sample.delays) != len(sample.scenario.paths):
        problems.append(f"{len(sample.delays)} labels for {len(sample.scenario.paths)} paths")
    elif not np.all(np.isfinite(sample.delays)):
        problems.append("missing delay label")
    return problems

