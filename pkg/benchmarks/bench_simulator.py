"""Compare the compiled and pure-Python simulator event loops.

    python benchmarks/bench_simulator.py [--nodes 8] [--ti 1500] [--repeat 3]

Both backends run the same scenario and arrivals; the script checks that
their results agree and reports events per second for each.
"""
import argparse
import time

from queuenet import simulator
from queuenet.netgraph import random_scenario
from queuenet.traffic import generate_tm


def bench(backend, scenario, tm, seed, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = simulator.run(scenario, tm, seed=seed, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return result, best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=8)
    parser.add_argument("--ti", type=float, default=1500.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    scenario = random_scenario(args.nodes, args.seed)
    tm = generate_tm(args.nodes, args.ti, args.seed)
    rows = {}
    for backend in simulator.available_backends():
        rows[backend] = bench(backend, scenario, tm, args.seed, args.repeat)
    results = [r for r, _ in rows.values()]
    assert all(r == results[0] for r in results), "backends disagree"
    events = results[0].events
    print(f"{args.nodes} nodes, TI {args.ti:g}, {events} events")
    for backend, (_, seconds) in rows.items():
        print(f"{backend:>9}: {seconds:8.3f} s  {events / seconds / 1e6:6.2f} M events/s")
    if len(rows) == 2:
        print(f"speedup: {rows['pure'][1] / rows['compiled'][1]:.1f}x")


if __name__ == "__main__":
    main()
