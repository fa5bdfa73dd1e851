"""Smoke test for the tisim extension module.

Build and install it first, e.g. `maturin develop -m crates/py/Cargo.toml`
or `pip install ./crates/py`, then run `python python/smoke_test.py`.
"""

import csv
import io

import tisim


def main():
    corridor = tisim.fixture("yuhangtang")
    assert tisim.summary(corridor) == "7 nodes, 12 links, 1 TAS, 5 signals"

    demo = tisim.fixture("demo")
    r = tisim.route(demo, 0, 6, constraints=[("time", "<=", 300.0)])
    assert r.nodes[0] == 0 and r.nodes[-1] == 6
    assert r.values["time"] <= 300.0
    try:
        tisim.route(demo, 0, 6, constraints=[("time", "<=", 1.0)])
        raise AssertionError("expected InfeasibleError")
    except tisim.InfeasibleError:
        pass

    chain = tisim.fixture("three_tas")
    flat = tisim.route(chain, 0, 8)
    assert tisim.route(chain, 0, 8, hierarchical=True).values == flat.values

    assert tisim.expected_wait("mm1", 0.5, 1.0) == 1.0
    assert tisim.expected_wait("md1", 0.5, 1.0) == 0.5
    est = tisim.simulate_wait("md1", 0.5, 1.0, arrivals=200_000, seed=3)
    assert abs(est - 0.5) / 0.5 < 0.05
    try:
        tisim.expected_wait("mm1", 1.0, 1.0)
        raise AssertionError("expected UnstableQueueError")
    except tisim.UnstableQueueError:
        pass

    short = {"sim.warmup": "50", "sim.duration": "200", "sim.measure_interval": "100"}
    ring = tisim.fixture("ring_road")
    intervals = tisim.simulate(ring, controlled=False, fraction=0.2, seed=2, overrides=short)
    assert [i for i, _ in intervals] == [0, 1]

    runs, summary = tisim.experiment(ring, [0.0, 0.6], 2, overrides=short)
    rows = list(csv.DictReader(io.StringIO(summary)))
    assert [float(row["fraction"]) for row in rows] == [0.0, 0.6]
    assert len(list(csv.DictReader(io.StringIO(runs)))) == 2 * 2 * 2 * 2
    for row in rows:
        print(f"AV {float(row['fraction']):.0%}: improvement {float(row['improvement_pct']):+.2f}%")
    print("smoke test passed")


if __name__ == "__main__":
    main()
