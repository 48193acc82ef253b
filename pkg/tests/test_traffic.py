import numpy as np
import pytest

from queuenet import traffic as tr


class _ConstUniform:
    def __init__(self, value):
        self.value = value

    def uniform(self, low, high, size):
        return np.full(size, self.value)


def test_tm_two_nodes_forced_by_formula():
    tm = tr.generate_tm(2, 400, _ConstUniform(1.0))
    assert tm.rates[0, 1] == 400.0 and tm.rates[1, 0] == 400.0
    assert tm.rates[0, 0] == 0.0


def test_tm_bounds_fourteen_nodes():
    tm = tr.generate_tm(14, 2000, 3)
    off = tm.rates[~np.eye(14, dtype=bool)]
    assert off.size == 14 * 13
    assert off.min() >= 0.1 * 2000 / 13 and off.max() <= 2000 / 13
    assert np.all(np.diag(tm.rates) == 0)


def test_tm_entry_mean():
    rng = np.random.default_rng(11)
    samples = np.array([tr.generate_tm(5, 1000, rng).rates[1, 3] for _ in range(10_000)])
    # U(0.1, 1) has mean 0.55 and variance 0.9^2 / 12
    sigma = (0.9 / np.sqrt(12)) * 1000 / 4 / np.sqrt(len(samples))
    assert abs(samples.mean() - 137.5) < 3 * sigma


def test_tm_entries_independent():
    rng = np.random.default_rng(2)
    n = 4000
    pairs = np.array([tr.generate_tm(5, 800, rng).rates[[0, 2], [1, 4]] for _ in range(n)])
    corr = np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1]
    assert abs(corr) < 3 / np.sqrt(n)


def test_tm_rejects_out_of_range_intensity():
    with pytest.raises(ValueError):
        tr.generate_tm(5, 399.0, 0)
    with pytest.raises(ValueError):
        tr.generate_tm(5, 2001.0, 0)
    with pytest.raises(ValueError):
        tr.generate_tm(1, 500.0, 0)


def test_tm_seeded_determinism():
    assert tr.generate_tm(6, 900, 4) == tr.generate_tm(6, 900, 4)


def test_interarrival_mean():
    flow = tr.FlowSpec(rate_bits=2.0, sizes=tr.Fixed(1.0))  # 2 packets per unit
    gaps = tr.interarrivals(flow, np.random.default_rng(0), 1_000_000)
    assert abs(gaps.mean() - 0.5) < 0.005
    # law of large numbers on the rate
    assert abs(1.0 / gaps.mean() - 2.0) < 0.02


def test_interarrival_zero_draw_is_finite():
    class ZeroRng:
        def random(self, n=None):
            return 0.0 if n is None else np.zeros(n)

    flow = tr.FlowSpec(rate_bits=5.0, sizes=tr.Fixed(1.0))
    assert tr.next_interarrival(flow, ZeroRng()) == 0.0
    assert np.all(np.isfinite(tr.interarrivals(flow, ZeroRng(), 4)))


def test_interarrival_scalar_and_batch_streams_match():
    flow = tr.FlowSpec(rate_bits=3.0, sizes=tr.Fixed(2.0))
    a = np.random.default_rng(8)
    b = np.random.default_rng(8)
    scalar = [tr.next_interarrival(flow, a) for _ in range(50)]
    np.testing.assert_array_equal(scalar, tr.interarrivals(flow, b, 50))


def test_packet_size_degenerate_small():
    flow = tr.FlowSpec(100.0, sizes=tr.Bimodal(400, 12000, 1.0))
    rng = np.random.default_rng(1)
    assert all(tr.next_packet_size(flow, rng) == 400 for _ in range(200))


def test_packet_size_weighted_mean():
    sizes = tr.Bimodal(400, 12000, 0.8).sample(np.random.default_rng(3), 100_000)
    assert abs(sizes.mean() - 2720) < 0.02 * 2720
    assert tr.Bimodal().mean == pytest.approx(2720)


def test_packet_size_symmetric_frequency():
    n = 100_000
    sizes = tr.Bimodal(400, 12000, 0.5).sample(np.random.default_rng(4), n)
    freq = np.mean(sizes == 400)
    assert abs(freq - 0.5) < 3 * np.sqrt(0.25 / n)


def test_arrival_process_rate_and_determinism():
    flow = tr.FlowSpec(rate_bits=2720.0)  # one packet per unit on average
    t1, s1 = tr.arrival_process(flow, 7, 0, 1, 20_000.0)
    t2, s2 = tr.arrival_process(flow, 7, 0, 1, 20_000.0)
    np.testing.assert_array_equal(t1, t2)
    np.testing.assert_array_equal(s1, s2)
    assert np.all(np.diff(t1) >= 0) and t1[-1] < 20_000
    assert abs(len(t1) - 20_000) < 4 * np.sqrt(20_000)
    t3, _ = tr.arrival_process(flow, 7, 1, 0, 20_000.0)
    assert not np.array_equal(t1[:100], t3[:100])


def test_tm_file_round_trip(tmp_path):
    tm = tr.generate_tm(5, 1234.5, 9)
    tos = tuple(tuple((s * 5 + d) % 10 for d in range(5)) for s in range(5))
    path = tmp_path / "tm.txt"
    tr.save_tm(path, tm, tos, seed=9)
    tm2, tos2, seed = tr.load_tm(path)
    assert tm2 == tm and seed == 9
    assert all(tos2[s][d] == tos[s][d] for s in range(5) for d in range(5) if s != d)
