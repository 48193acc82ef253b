import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from queuenet import netgraph as ng, simulator as sim, traffic as tr
from queuenet.netgraph import Policy, Port, QueueConfig
from queuenet.simulator.scheduling import DRR, FIFO, SP, WFQ, PortState, QueueState, drr_quanta

from builders import make_scenario, mm1, path_index, tm_from, two_queue_link

BACKENDS = sim.available_backends()


# -- port-level operations -----------------------------------------------------

def test_enqueue_empty_accepted_and_full_dropped():
    port = PortState(FIFO, [QueueState(16)])
    assert sim.enqueue(port, 0, "p0", 100.0)
    for i in range(15):
        assert sim.enqueue(port, 0, i, 100.0)
    assert not sim.enqueue(port, 0, "late", 100.0)


def test_seventeenth_packet_dropped_while_link_busy():
    port = PortState(FIFO, [QueueState(16)])
    # the link is transmitting another packet: the queue itself starts idle
    port.busy = True
    accepted = [sim.enqueue(port, 0, i, 1000.0) for i in range(17)]
    assert accepted == [True] * 16 + [False]
    assert port.backlog == 16


def test_select_next_idle_and_fifo():
    port = PortState(FIFO, [QueueState(16)])
    assert sim.select_next(port) is None
    port.enqueue(0, "a", 1.0)
    assert sim.select_next(port) == 0


def test_select_next_strict_priority_until_empty():
    # local queue 1 has rank 0
    port = PortState(SP, [QueueState(64), QueueState(64)], rank_order=[1, 0])
    for i in range(3):
        port.enqueue(0, f"low{i}", 1.0)
        port.enqueue(1, f"high{i}", 1.0)
    served = []
    while (qi := sim.select_next(port)) is not None:
        served.append(port.dequeue(qi)[0])
    assert served == ["high0", "high1", "high2", "low0", "low1", "low2"]


def test_wfq_port_share_three_to_one():
    port = PortState(WFQ, [QueueState(64, 0.75), QueueState(64, 0.25)])
    counts = [0, 0]
    for i in range(20):
        port.enqueue(0, i, 1.0)
        port.enqueue(1, i, 1.0)
    for _ in range(4000):
        qi = port.select_next()
        port.dequeue(qi)
        counts[qi] += 1
        port.enqueue(qi, 0, 1.0)  # keep both saturated
    assert counts[0] / counts[1] == pytest.approx(3.0, rel=0.02)


def test_drr_port_alternates_with_equal_quanta():
    quanta = drr_quanta([0.5, 0.5])
    assert quanta == [12000.0, 12000.0]
    port = PortState(DRR, [QueueState(64, 0.5, quanta[0]), QueueState(64, 0.5, quanta[1])])
    for i in range(10):
        port.enqueue(0, i, 12000.0)
        port.enqueue(1, i, 12000.0)
    order = []
    for _ in range(10):
        qi = port.select_next()
        port.dequeue(qi)
        order.append(qi)
    assert order == [0, 1] * 5


def test_drr_skips_idle_rounds_with_tiny_quantum():
    port = PortState(DRR, [QueueState(64, 0.01, 12.0), QueueState(64, 0.99, 1188.0)])
    port.enqueue(0, "a", 12000.0)
    assert port.select_next() == 0
    assert port.queues[0].deficit == pytest.approx(12000.0)


# -- whole-network runs ----------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_pure_transmission_delay_at_low_load(backend):
    sc = make_scenario(2, [(0, 1, 1e6), (1, 0, 1e6)])
    tm = tm_from({(0, 1): 10.0}, 2)
    res = sim.run(sc, tm, duration=50_000.0, seed=3, sizes=tr.Fixed(1000.0), backend=backend)
    k = path_index(sc, 0, 1)
    assert res.delivered[k] > 300
    assert res.mean_delay[k] == pytest.approx(1000.0 / 1e6, rel=1e-6)
    assert np.isnan(res.mean_delay[path_index(sc, 1, 0)])
    assert not res.complete


@pytest.mark.parametrize("backend", BACKENDS)
def test_mm1_half_load(backend):
    sc, tm, expected = mm1(0.5)
    packets = 100_000 if backend == "compiled" else 30_000
    duration = packets / 0.5 / 0.9
    res = sim.run(sc, tm, duration=duration, seed=1, sizes=tr.Exponential(1000.0), backend=backend)
    assert expected == 2.0
    assert res.delivered[0] >= 0.95 * packets
    assert res.mean_delay[0] == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize("backend", BACKENDS)
def test_overload_drops_and_respects_buffer(backend):
    port = Port(0, 0, Policy.FIFO, (QueueConfig(16, 0, 1.0),), (0,) * 10)
    sc = make_scenario(2, [(0, 1, 1000.0), (1, 0, 1000.0)], {0: port})
    tm = tm_from({(0, 1): 2000.0}, 2)
    res = sim.run(sc, tm, duration=20_000.0, seed=2, backend=backend, check=True)
    assert res.loss > 0.3
    assert res.queue_max_occupancy[0] == 16
    assert res.work_conserving and res.fifo_ordered


@pytest.mark.parametrize("backend", BACKENDS)
def test_wfq_share_saturated(backend):
    sc = two_queue_link(Policy.WFQ, (0.75, 0.25))
    tm = tm_from({(1, 2): 2000.0, (0, 2): 2000.0}, 3)
    res = sim.run(sc, tm, duration=200_000.0, seed=5, sizes=tr.Fixed(1000.0), backend=backend)
    q0, q1 = sc.topology.queue_offsets[2], sc.topology.queue_offsets[2] + 1
    bits = res.queue_served_bits
    assert bits[q0] / bits[q1] == pytest.approx(3.0, rel=0.02)


@pytest.mark.parametrize("backend", BACKENDS)
def test_drr_share_saturated(backend):
    sc = two_queue_link(Policy.DRR, (0.5, 0.5))
    tm = tm_from({(1, 2): 2000.0, (0, 2): 2000.0}, 3)
    res = sim.run(sc, tm, duration=400_000.0, seed=6, backend=backend)
    q0, q1 = sc.topology.queue_offsets[2], sc.topology.queue_offsets[2] + 1
    bits = res.queue_served_bits
    assert bits[q0] / bits[q1] == pytest.approx(1.0, rel=0.02)


@pytest.mark.parametrize("backend", BACKENDS)
def test_strict_priority_starves_low(backend):
    sc = two_queue_link(Policy.SP, (0.0, 0.0))  # queue 0 has rank 0
    tm = tm_from({(1, 2): 3000.0, (0, 2): 500.0}, 3)
    res = sim.run(sc, tm, duration=50_000.0, seed=7, backend=backend)
    assert res.delivered[path_index(sc, 1, 2)] > 1000
    assert res.sent[path_index(sc, 0, 2)] > 0
    assert res.delivered[path_index(sc, 0, 2)] == 0


def test_run_rejects_bad_warmup():
    sc, tm, _ = mm1(0.5)
    with pytest.raises(ValueError):
        sim.run(sc, tm, duration=10.0, warmup=10.0)


def test_determinism_and_seed_sensitivity():
    sc = ng.random_scenario(5, 1)
    tm = tr.generate_tm(5, 1500, 1)
    a = sim.run(sc, tm, seed=4, duration=5000.0)
    b = sim.run(sc, tm, seed=4, duration=5000.0)
    c = sim.run(sc, tm, seed=5, duration=5000.0)
    assert a == b
    assert not np.array_equal(a.mean_delay, c.mean_delay)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled kernel not built")
@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 10**6), ti=st.sampled_from([400.0, 1200.0, 2000.0]))
def test_backends_agree_and_invariants_hold(n, seed, ti):
    sc = ng.random_scenario(n, seed)
    tm = tr.generate_tm(n, ti, seed)
    a = sim.run(sc, tm, duration=2000.0, seed=seed, backend="compiled", check=True)
    b = sim.run(sc, tm, duration=2000.0, seed=seed, backend="pure", check=True)
    assert a == b
    assert a.work_conserving and a.fifo_ordered
    assert np.all(a.delivered + a.dropped <= a.sent)
    caps = np.array([l.capacity for l in sc.topology.links])
    q_cap = [q.size_packets for p in sc.topology.ports for q in p.queues]
    assert np.all(a.queue_max_occupancy <= q_cap)
    for k, path in enumerate(sc.paths):
        if a.delivered[k]:
            floor = sum(tr.Bimodal().minimum / caps[l] for l in path.links)
            assert a.mean_delay[k] >= floor * (1 - 1e-12)


def test_default_duration_targets_slowest_flow():
    tm = tm_from({(0, 1): 272.0, (1, 0): 2720.0}, 2)
    # slowest flow: 0.1 packets per unit, 1000 packets after a 10% warmup
    assert sim.default_duration(tm) == pytest.approx(1000 / 0.1 / 0.9)


def test_delay_grows_with_intensity_on_saturating_paths():
    for seed in range(3):
        sc = ng.random_scenario(8, 100 + seed)
        base = tr.generate_tm(8, 400, seed)
        high = tr.TrafficMatrix(base.rates * 5, 2000.0)
        lo = sim.run(sc, base, seed=seed)
        hi = sim.run(sc, high, seed=seed)
        saturating = hi.dropped > 0
        assert np.all(hi.mean_delay[saturating] >= lo.mean_delay[saturating])
