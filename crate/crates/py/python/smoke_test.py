"""Smoke test for the fedelim extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
    python crates/py/python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import fedelim


def main():
    b = fedelim.confidence_bound(4, c=0.1, c1=1.0, delta=0.1, horizon=5000)
    assert abs(b - 0.1 * math.sqrt(math.log(50000) / 4)) < 1e-15, b
    assert fedelim.transition_depth() == 7
    t = fedelim.tau(3)
    assert fedelim.quota(t, 10) == -(-t // 10)

    kids = fedelim.children(2, 3)
    assert kids == [(3, 5), (3, 6)]
    assert all(fedelim.parent(*k) == (2, 3) for k in kids)
    lo, hi = fedelim.cell([0.0], [1.0], 2, 3)
    assert (lo, hi) == ([0.5], [0.75])
    assert fedelim.locate([0.0], [1.0], [0.6], 2) == (2, 3)

    suite = fedelim.Suite("garland", 3, shift_std=0.0)
    opt = suite.global_optimum()
    assert abs(opt["value"] - 1.0) < 1e-9
    assert abs(suite.eval_global(opt["point"]) - opt["value"]) < 1e-15
    try:
        suite.eval_local(0, [2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-domain point accepted")

    exp = fedelim.Experiment(
        objective="doublesine", clients=3, horizon=600, seeds=[0, 1], checkpoint_stride=100, variants=fedelim.VARIANTS
    )
    one = exp.run("pfpne", 0, transcript=True)
    assert one["checkpoints"][-1] == 600
    assert len(one["pulls"]) == 3 and all(len(p) == 600 for p in one["pulls"])
    assert one["transcript"].startswith("report client=0 depth=0")
    again = exp.run("pfpne", 0, transcript=True)
    assert again["transcript"] == one["transcript"]

    with tempfile.TemporaryDirectory() as d:
        res = exp.run_many(out=d)
        assert set(res["aggregates"]) == set(fedelim.VARIANTS)
        assert res["aggregates"]["local-only"]["comm_rounds_mean"] == 0.0
        header = (Path(d) / "regret.csv").read_text().splitlines()[0]
        assert header == "variant,seed,t,avg_cum_regret"

    try:
        fedelim.Experiment("objective = 'garland'\nwarmup = 1\n")
    except ValueError as e:
        assert "warmup" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test ok:", exp, "final regret", one["avg_cum_regret"][-1])


if __name__ == "__main__":
    main()
