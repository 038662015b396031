import numpy as np
import pytest
import scipy.sparse as sp

from mra.conic import (INFEASIBLE, MAX_BINARIES, OPTIMAL, Affine, Block, Builder, ConicProgram, TooManyBinaries,
                       enumerate_binaries, geomean_epigraph, solve)


def _one_var(rows):
    bld = Builder()
    x = bld.var(1)[0]
    for kind, aff in rows:
        getattr(bld, kind)(aff(Affine.of(x)))
    return bld, x


def test_lp_lower_bound():
    bld, x = _one_var([("le", lambda v: 3.0 - v)])
    bld.minimize(Affine.of(x))
    out = solve(bld.build())
    assert out.status == OPTIMAL
    assert out.point[x] == pytest.approx(3.0, abs=1e-7)
    assert out.objective_value == pytest.approx(3.0, abs=1e-7)


def test_infeasible():
    bld, x = _one_var([("le", lambda v: v - 1.0), ("le", lambda v: 2.0 - v)])
    out = solve(bld.build())
    assert out.status == INFEASIBLE and out.point is None


def test_soc_sqrt():
    # max t s.t. t^2 <= d with d = 4: rotated cone d * 1 >= t^2
    bld = Builder()
    t = bld.var(1)[0]
    bld.rsoc(Affine({}, 4.0), Affine({}, 1.0), [Affine.of(t)])
    bld.minimize(Affine.of(t, -1.0))
    out = solve(bld.build())
    assert out.point[t] == pytest.approx(2.0, abs=1e-6)


def test_second_order_cone_norm():
    # min s s.t. ||(3, 4)|| <= s
    bld = Builder()
    s = bld.var(1)[0]
    bld.soc(Affine.of(s), [Affine({}, 3.0), Affine({}, 4.0)])
    bld.minimize(Affine.of(s))
    assert solve(bld.build()).objective_value == pytest.approx(5.0, abs=1e-6)


@pytest.mark.parametrize("p", [2, 3, 5])
def test_geomean_matches_closed_form(p):
    rng = np.random.default_rng(p)
    for _ in range(5):
        u = rng.uniform(0.1, 3.0, p)
        bld = Builder()
        s = bld.var(1)[0]
        geomean_epigraph(bld, [Affine({}, float(v)) for v in u], Affine.of(s))
        bld.minimize(Affine.of(s, -1.0))
        out = solve(bld.build())
        assert out.status == OPTIMAL
        assert out.point[s] == pytest.approx(float(np.prod(u) ** (1.0 / p)), rel=1e-6)


def test_quadratic_objective():
    # min 0.5 (x - 2)^2 on x <= 1
    prog = ConicProgram(1, np.array([-2.0]), (Block("le", sp.csr_matrix([[1.0]]), np.array([-1.0])),),
                        P=sp.csc_matrix([[1.0]]))
    out = solve(prog)
    assert out.point[0] == pytest.approx(1.0, abs=1e-7)


def _knapsack(rng, n):
    w = rng.uniform(1, 5, n)
    v = rng.uniform(1, 5, n)
    bld = Builder()
    x = bld.var(n)
    bld.le_matrix(w[None, :], x, 0.4 * w.sum())
    bld.le_matrix(sp.eye(n), x, 1.0)
    bld.le_matrix(-sp.eye(n), x, 0.0)
    prog = bld.build()
    return prog.with_objective(-v).with_binary(np.ones(n, dtype=bool))


@pytest.mark.parametrize("seed", range(5))
def test_branch_and_bound_matches_enumeration(seed):
    prog = _knapsack(np.random.default_rng(seed), 8)
    a, b = solve(prog), enumerate_binaries(prog)
    assert a.status == b.status == OPTIMAL
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-6)
    assert np.all(np.isin(a.point, (0.0, 1.0)))


def test_binary_cap():
    prog = _knapsack(np.random.default_rng(0), MAX_BINARIES + 1)
    with pytest.raises(TooManyBinaries):
        solve(prog)


def test_deterministic():
    prog = _knapsack(np.random.default_rng(9), 10)
    a, b = solve(prog), solve(prog)
    np.testing.assert_array_equal(a.point, b.point)
    assert a.nodes == b.nodes


def test_violation_reports_worst_row():
    bld, x = _one_var([("le", lambda v: v - 1.0)])
    prog = bld.build()
    assert prog.violation(np.array([3.0])) == pytest.approx(2.0)
    assert prog.violation(np.array([0.0])) == 0.0


def test_undeclared_variable_rejected():
    with pytest.raises(ValueError):
        ConicProgram(1, np.zeros(1), (Block("le", sp.csr_matrix(np.ones((1, 2))), np.zeros(1)),))
