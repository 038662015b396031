import itertools
import math

import numpy as np
import pytest

from mra import benchmarks
from mra.core import BlockAffineCoupling, BlockPrimalPoint
from mra.harness import (ConfigError, ExperimentConfig, IterationRecord, PointMetrics, best_to_date, first_feasible,
                         primal_average, project_feasible, run_experiment)

TINY = {"family": "ra", "seed": 0, "params": {"K": 4, "m": 3}}


@pytest.fixture(scope="module")
def tiny():
    inst = benchmarks.generate("ra", 0, K=4, m=3)
    inst.ensure_reference()
    return inst


def test_primal_average():
    rng = np.random.default_rng(0)
    hist = [BlockPrimalPoint((rng.normal(size=2), rng.normal(size=3))) for _ in range(3)]
    np.testing.assert_array_equal(primal_average(hist, 1).blocks[1], hist[0].blocks[1])
    avg = primal_average(hist, 3)
    for i in range(2):
        np.testing.assert_allclose(avg.blocks[i], (hist[0].blocks[i] + hist[1].blocks[i] + hist[2].blocks[i]) / 3)
    const = [BlockPrimalPoint((np.ones(2),))] * 4
    np.testing.assert_allclose(primal_average(const).blocks[0], np.ones(2))
    with pytest.raises(ValueError):
        primal_average(hist, 0)


def test_projection_trivial_cases():
    cp = BlockAffineCoupling((np.array([[1.0]]),), np.array([0.0]))
    assert project_feasible(cp, [np.array([2.0])]).blocks[0][0] == pytest.approx(0.0, abs=1e-7)
    x = [np.array([-1.0])]
    np.testing.assert_array_equal(project_feasible(cp, x).blocks[0], x[0])


def _active_set_projection(A, b, x):
    best, arg = np.inf, None
    m = A.shape[0]
    for r in range(m + 1):
        for S in itertools.combinations(range(m), r):
            S = list(S)
            if S:
                AS = A[S]
                mu = np.linalg.lstsq(AS @ AS.T, AS @ x - b[S], rcond=None)[0]
                if np.any(mu < -1e-9):
                    continue
                z = x - AS.T @ mu
            else:
                z = x.copy()
            if np.all(A @ z <= b + 1e-9):
                d = float(np.sum((z - x) ** 2))
                if d < best:
                    best, arg = d, z
    return arg


@pytest.mark.parametrize("seed", range(5))
def test_projection_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 5))
    A1, A2 = rng.normal(size=(m, 2)), rng.normal(size=(m, 3))
    b = rng.normal(size=m)
    x = [rng.normal(size=2) * 2, rng.normal(size=3) * 2]
    cp = BlockAffineCoupling((A1, A2), b)
    z = project_feasible(cp, x).flat()
    expect = _active_set_projection(np.hstack([A1, A2]), b, np.concatenate(x))
    np.testing.assert_allclose(z, expect, atol=1e-6)
    assert np.all(cp.Ax(BlockPrimalPoint.from_flat(z, [2, 3])) <= b + 1e-6)


def test_zero_iterations(tiny):
    res = run_experiment(ExperimentConfig(instance=TINY, max_iterations=0), tiny)
    assert res.records == [] and res.stop_reason == "zero-iterations"


@pytest.mark.parametrize("method", ["accpm", "subgradient"])
def test_short_run_invariants(tiny, method):
    cfg = ExperimentConfig(instance=TINY, method=method, max_iterations=6, oracle={"N": 4})
    res = run_experiment(cfg, tiny)
    assert 1 <= len(res.records) <= 6
    for rec in res.records:
        raw, mra = rec.points["raw"], rec.points["mra"]
        assert mra.rp + mra.rc <= raw.rp + raw.rc + 1e-9
        assert rec.points["proj"].relinf * np.linalg.norm(tiny.coupling.b) <= 1e-6 * tiny.coupling.m + 1e-9
    for p in ("raw", "mra", "avg", "proj"):
        series = [v for v in best_to_date(res.records, p, res.threshold) if not math.isnan(v)]
        assert all(b <= a for a, b in zip(series, series[1:]))
    if method == "subgradient":
        assert math.isnan(res.records[0].points["dualavg"].rp)


def test_recovery_cadence(tiny):
    cfg = ExperimentConfig(instance=TINY, max_iterations=4, oracle={"N": 3}, recovery={"cadence": 2},
                           track_projection=False, track_dual_average=False)
    res = run_experiment(cfg, tiny)
    tracked = [not math.isnan(r.points["mra"].rp) for r in res.records]
    assert tracked == [True, False, True, False][: len(tracked)]
    assert all(math.isnan(r.points["proj"].rp) for r in res.records)


def test_history_window_grows_bundles(tiny):
    widths = []
    cfg = ExperimentConfig(instance=TINY, max_iterations=4, oracle={"N": 3, "history": 3}, accpm_tol=0.0)
    run_experiment(cfg, tiny, hook=lambda ctx: widths.append(ctx.bundles[0].width))
    assert widths == [3, 6, 9, 9][: len(widths)]


def test_stop_at_feasible(tiny):
    cfg = ExperimentConfig(instance=TINY, max_iterations=30, oracle={"N": 6})
    res = run_experiment(cfg, tiny, stop_at_feasible="mra")
    if res.stop_reason == "feasible":
        assert first_feasible(res.records, "mra", res.threshold) == len(res.records)


def test_best_to_date_and_first_feasible():
    def rec(k, relinf, sub):
        pm = PointMetrics(0.0, sub, 0.0, 0.0, relinf, 1.0)
        return IterationRecord(k, 0.0, {"mra": pm})
    recs = [rec(1, 1.0, 0.5), rec(2, 0.0, 0.3), rec(3, 0.0, 0.4), rec(4, 0.0, 0.1)]
    assert first_feasible(recs, "mra", 1e-6) == 2
    out = best_to_date(recs, "mra", 1e-6)
    assert math.isnan(out[0]) and out[1:] == [0.3, 0.3, 0.1]


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(method="newton")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(oracle={"family": "value-subopt", "N": 10, "mixing": [[0.1, 5], [0.01, 4]]})
    with pytest.raises(ConfigError):
        ExperimentConfig(instance={"family": "ra", "file": "x.json"})
    cfg = ExperimentConfig().replace(oracle={"N": 50})
    assert cfg.oracle.N == 50 and cfg.oracle.eps == 0.1
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_assignment_uses_absolute_threshold():
    inst = benchmarks.generate("assign", 0, n=6, m=3)
    from mra.harness import feasibility_threshold
    cfg = ExperimentConfig(feasibility_threshold=1e-3, absolute_feasibility_threshold=1e-7)
    expect = 1e-7 if np.linalg.norm(inst.coupling.b) == 0 else 1e-3
    assert feasibility_threshold(cfg, inst.coupling) == expect
