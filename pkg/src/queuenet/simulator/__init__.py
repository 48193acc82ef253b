"""Packet-level discrete-event simulation of a scenario under a traffic matrix.

Two interchangeable event loops exist: a compiled one (``_kernel``) and a
plain Python one (``_pure``).  The compiled loop is used when it was built;
set ``QUEUENET_BACKEND=pure`` to force the fallback.  Random variates are
drawn up front with numpy, so both loops see identical inputs and return
identical results.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..netgraph import POLICIES, Policy, Scenario, queues_of_link
from ..traffic import Bimodal, FlowSpec, SizeDist, TrafficMatrix, arrival_process
from . import _pure
from .scheduling import DRR_QUANTUM, PortState, QueueState, drr_quanta

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None

__all__ = ["SimResult", "run", "default_duration", "available_backends", "default_backend",
           "PortState", "QueueState", "enqueue", "select_next"]

WARMUP_FRACTION = 0.1
MIN_PACKETS = 1000


def available_backends() -> list[str]:
    return (["compiled"] if _kernel is not None else []) + ["pure"]


def default_backend() -> str:
    forced = os.environ.get("QUEUENET_BACKEND")
    if forced:
        if forced not in available_backends():
            raise RuntimeError(f"QUEUENET_BACKEND={forced!r} not available")
        return forced
    return available_backends()[0]


def _simulate(inp: dict, backend: str | None) -> dict:
    backend = backend or default_backend()
    if backend == "compiled":
        if _kernel is None:
            raise RuntimeError("compiled simulator kernel is not built")
        return _kernel.simulate(inp)
    if backend == "pure":
        return _pure.simulate(inp)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(eq=False)
class SimResult:
    """Per-path statistics (ordered like ``scenario.paths``) over post-warmup packets."""

    mean_delay: np.ndarray  # NaN where nothing was delivered
    sent: np.ndarray
    delivered: np.ndarray
    dropped: np.ndarray
    queue_served_packets: np.ndarray
    queue_served_bits: np.ndarray
    queue_max_occupancy: np.ndarray
    queue_drops: np.ndarray
    work_conserving: bool
    fifo_ordered: bool
    events: int

    @property
    def loss(self) -> float:
        total = int(self.sent.sum())
        return float(self.dropped.sum()) / total if total else 0.0

    @property
    def complete(self) -> bool:
        """Every path delivered at least one packet."""
        return bool(np.all(self.delivered > 0))

    def path_loss(self) -> np.ndarray:
        return np.divide(self.dropped, self.sent, out=np.zeros(len(self.sent)), where=self.sent > 0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimResult):
            return NotImplemented
        arrays = ("mean_delay", "sent", "delivered", "dropped", "queue_served_packets",
                  "queue_served_bits", "queue_max_occupancy", "queue_drops")
        return (all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays)
                and self.work_conserving == other.work_conserving
                and self.fifo_ordered == other.fifo_ordered and self.events == other.events)


def default_duration(tm: TrafficMatrix, sizes: SizeDist = Bimodal(), min_packets: int = MIN_PACKETS,
                     warmup_fraction: float = WARMUP_FRACTION) -> float:
    """Duration at which the slowest flow expects ``min_packets`` post-warmup packets."""
    rates = tm.rates[~np.eye(tm.n_nodes, dtype=bool)]
    rates = rates[rates > 0]
    if rates.size == 0:
        raise ValueError("traffic matrix carries no traffic")
    slowest = rates.min() / sizes.mean
    return min_packets / slowest / (1.0 - warmup_fraction)


def build_layout(scenario: Scenario) -> dict:
    """Static arrays describing links, queues and flow hops for the event loops."""
    topo = scenario.topology
    paths = scenario.paths
    n_links = len(topo.links)
    link_qlo = np.zeros(n_links, dtype=np.int32)
    link_qhi = np.zeros(n_links, dtype=np.int32)
    link_policy = np.zeros(n_links, dtype=np.int32)
    q_order = np.zeros(topo.n_queues, dtype=np.int32)
    q_cap = np.zeros(topo.n_queues, dtype=np.int32)
    q_weight = np.zeros(topo.n_queues, dtype=np.float64)
    q_quantum = np.full(topo.n_queues, DRR_QUANTUM, dtype=np.float64)
    for li in range(n_links):
        pi = topo.port_of_link[li]
        port = topo.ports[pi]
        lo, hi = topo.queue_offsets[pi], topo.queue_offsets[pi + 1]
        link_qlo[li], link_qhi[li] = lo, hi
        policy = Policy(port.policy)
        link_policy[li] = POLICIES.index(policy)
        q_order[lo:hi] = queues_of_link(topo, li)
        for qi, q in enumerate(port.queues):
            q_cap[lo + qi] = q.size_packets
            q_weight[lo + qi] = q.weight
        if policy is Policy.DRR:
            q_quantum[lo:hi] = drr_quanta([q.weight for q in port.queues])
    hop_start = np.zeros(len(paths) + 1, dtype=np.int32)
    hop_start[1:] = np.cumsum([len(p.elements) for p in paths])
    hop_queue = np.array([q for p in paths for q, _ in p.elements], dtype=np.int32)
    hop_link = np.array([l for p in paths for _, l in p.elements], dtype=np.int32)
    return {
        "flow_hop_start": hop_start, "hop_link": hop_link, "hop_queue": hop_queue,
        "link_cap": np.array([l.capacity for l in topo.links], dtype=np.float64),
        "link_policy": link_policy, "link_qlo": link_qlo, "link_qhi": link_qhi,
        "q_order": q_order, "q_cap": q_cap, "q_weight": q_weight, "q_quantum": q_quantum,
    }


def build_arrivals(scenario: Scenario, tm: TrafficMatrix, duration: float, seed: int,
                   sizes: SizeDist = Bimodal()) -> dict:
    times, flows, pkt_sizes = [], [], []
    for fi, path in enumerate(scenario.paths):
        flow = FlowSpec(float(tm.rates[path.src, path.dst]), path.tos, sizes)
        t, s = arrival_process(flow, seed, path.src, path.dst, duration)
        times.append(t)
        pkt_sizes.append(s)
        flows.append(np.full(len(t), fi, dtype=np.int32))
    times = np.concatenate(times) if times else np.empty(0)
    flows = np.concatenate(flows) if flows else np.empty(0, dtype=np.int32)
    pkt_sizes = np.concatenate(pkt_sizes) if pkt_sizes else np.empty(0)
    order = np.lexsort((flows, times))
    return {"arr_time": np.ascontiguousarray(times[order], dtype=np.float64),
            "arr_flow": np.ascontiguousarray(flows[order], dtype=np.int32),
            "arr_size": np.ascontiguousarray(pkt_sizes[order], dtype=np.float64)}


def run(scenario: Scenario, traffic_matrix: TrafficMatrix, duration: float | None = None,
        warmup: float | None = None, seed: int = 0, sizes: SizeDist = Bimodal(),
        backend: str | None = None, check: bool = False) -> SimResult:
    """Simulate every flow of ``scenario`` concurrently.

    Packets born before ``warmup`` are excluded from all statistics.  With
    ``check`` the event loop also verifies work conservation and per-queue
    FIFO order after every event (slow).
    """
    if duration is None:
        duration = default_duration(traffic_matrix, sizes)
    if warmup is None:
        warmup = WARMUP_FRACTION * duration
    if not 0 <= warmup < duration:
        raise ValueError(f"warmup {warmup} must lie in [0, duration={duration})")
    if traffic_matrix.n_nodes != scenario.topology.n_nodes:
        raise ValueError("traffic matrix size does not match the topology")
    inp = build_layout(scenario)
    inp.update(build_arrivals(scenario, traffic_matrix, duration, seed, sizes))
    inp.update(warmup=float(warmup), duration=float(duration), check=bool(check))
    out = _simulate(inp, backend)
    delivered = out["flow_delivered"]
    mean_delay = np.full(len(delivered), np.nan)
    np.divide(out["flow_delay_sum"], delivered, out=mean_delay, where=delivered > 0)
    return SimResult(mean_delay, out["flow_sent"], delivered, out["flow_dropped"],
                     out["q_served_pkts"], out["q_served_bits"], out["q_max_occupancy"],
                     out["q_drops"], out["work_conserving"], out["fifo_ordered"], int(out["events"]))


def enqueue(port: PortState, queue_index: int, packet, size: float) -> bool:
    """Offer a packet to one queue of a port; ``False`` when the buffer is full."""
    return port.enqueue(queue_index, packet, size)


def select_next(port: PortState) -> int | None:
    """Queue the port's scheduler serves next, ``None`` when idle."""
    return port.select_next()
