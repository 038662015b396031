import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from mra.core import (EQ_LOWER, EQ_UPPER, INEQ, BlockAffineCoupling, BlockPrimalPoint, DimensionError, DualPoint,
                      Residuals, coupling_from_dict, coupling_to_dict, dual_value, local_prices,
                      relative_primal_infeasibility, relative_suboptimality, residuals, stopping_check)


def test_local_prices_scalar_example():
    cp = BlockAffineCoupling((np.array([[1.0, 2.0]]),), np.array([1.0]))
    (y,) = local_prices(cp, DualPoint([2.0]))
    np.testing.assert_array_equal(y, [-2.0, -4.0])


def test_local_prices_zero_dual():
    rng = np.random.default_rng(1)
    cp = BlockAffineCoupling((rng.normal(size=(3, 2)), rng.normal(size=(3, 4))), np.ones(3))
    for y in local_prices(cp, DualPoint(np.zeros(3))):
        assert not np.any(y)


def test_local_prices_match_naive_loop():
    rng = np.random.default_rng(2)
    blocks = (rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    cp = BlockAffineCoupling(blocks, np.zeros(3))
    lam = rng.uniform(0, 2, 3)
    ys = local_prices(cp, DualPoint(lam))
    for B, y in zip(blocks, ys):
        for j in range(B.shape[1]):
            assert y[j] == pytest.approx(-sum(B[r, j] * lam[r] for r in range(3)))


def test_residuals_example():
    cp = BlockAffineCoupling((np.eye(2),), np.zeros(2))
    res = residuals(cp, [np.array([1.0, -2.0])], DualPoint([0.5, 0.5]))
    assert res.r_p == pytest.approx(1.0)
    assert res.r_c == pytest.approx(1.5)


def test_residuals_feasible_point_has_zero_rp():
    cp = BlockAffineCoupling((np.eye(2),), np.array([1.0, 1.0]))
    assert residuals(cp, [np.array([0.5, -3.0])], DualPoint([1.0, 1.0])).r_p == 0.0


def test_residuals_elementwise_oracle():
    rng = np.random.default_rng(3)
    A1, A2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    b = rng.normal(size=5)
    x1, x2 = rng.normal(size=3), rng.normal(size=2)
    lam = rng.uniform(0, 1, 5)
    res = residuals(BlockAffineCoupling((A1, A2), b), [x1, x2], DualPoint(lam))
    rp = rc = 0.0
    for r in range(5):
        v = sum(A1[r, j] * x1[j] for j in range(3)) + sum(A2[r, j] * x2[j] for j in range(2)) - b[r]
        rp += max(v, 0.0)
        rc += lam[r] * abs(v)
    assert res.r_p == pytest.approx(rp)
    assert res.r_c == pytest.approx(rc)


def test_relative_infeasibility():
    cp = BlockAffineCoupling((np.eye(2),), np.array([3.0, 4.0]))
    assert relative_primal_infeasibility(Residuals(1.0, 0.0), cp) == pytest.approx(0.2)
    assert relative_primal_infeasibility(Residuals(0.0, 0.0), cp) == 0.0
    with pytest.raises(ValueError):
        relative_primal_infeasibility(Residuals(1.0, 0.0), BlockAffineCoupling((np.eye(2),), np.zeros(2)))


def test_dual_value_point_domain():
    # f_i(0) = 0 on dom {0}: g(lambda) = -lambda'b
    cp = BlockAffineCoupling((np.array([[1.0], [2.0]]),), np.array([1.0, 3.0]))
    lam = np.array([0.5, 2.0])
    g = dual_value(cp, DualPoint(lam), BlockPrimalPoint((np.zeros(1),), (0.0,)))
    assert g == pytest.approx(-6.5)


def test_dual_value_matches_centralized_lagrangian():
    # two LP agents on boxes; min_x sum c_i'x_i + lam'(Ax - b) solved jointly by linprog
    rng = np.random.default_rng(4)
    A = [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]
    c = [rng.normal(size=3), rng.normal(size=3)]
    b = rng.normal(size=2)
    lam = rng.uniform(0, 1, 2)
    cp = BlockAffineCoupling(tuple(A), b)
    ys = local_prices(cp, DualPoint(lam))
    xs, fs = [], []
    for ci, y in zip(c, ys):
        x = ((ci - y) < 0).astype(float)  # argmin of (c - y)'x over [0, 1]^3
        xs.append(x)
        fs.append(float(ci @ x))
    g = dual_value(cp, DualPoint(lam), BlockPrimalPoint(tuple(xs), tuple(fs)))
    Afull = np.hstack(A)
    out = linprog(np.r_[c[0], c[1]] + Afull.T @ lam, bounds=[(0, 1)] * 6, method="highs")
    assert g == pytest.approx(out.fun - lam @ b, abs=1e-9)


def test_dual_value_needs_f_values():
    cp = BlockAffineCoupling((np.eye(1),), np.ones(1))
    with pytest.raises(ValueError):
        dual_value(cp, DualPoint([1.0]), BlockPrimalPoint((np.zeros(1),)))


def test_stopping_check():
    assert stopping_check(Residuals(0.0, 0.0), 0.0)
    assert stopping_check(Residuals(0.1, 0.1), 0.2)
    assert not stopping_check(Residuals(0.1, 0.2), 0.2)


def test_relative_suboptimality():
    assert relative_suboptimality(11.0, 10.0) == pytest.approx(0.1)
    assert relative_suboptimality(-9.0, -10.0) == pytest.approx(0.1)
    assert relative_suboptimality(0.5, 0.0) == 0.5


def test_validation_errors():
    with pytest.raises(ValueError):
        DualPoint([-1.0, 0.0])
    with pytest.raises(DimensionError):
        BlockAffineCoupling((np.ones((2, 2)), np.ones((3, 1))), np.ones(2))
    cp = BlockAffineCoupling((np.eye(2),), np.ones(2))
    with pytest.raises(DimensionError):
        local_prices(cp, DualPoint([1.0]))
    with pytest.raises(DimensionError):
        cp.Ax([np.ones(3)])
    with pytest.raises(DimensionError):
        BlockAffineCoupling((np.ones((2, 1)),), np.ones(2), (EQ_UPPER, INEQ))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(-5, 5))
def test_equality_pair_violation(xv, beta):
    a = np.array([[1.0, -2.0, 0.5]])
    cp = BlockAffineCoupling((np.vstack([a, -a]),), np.array([beta, -beta]), (EQ_UPPER, EQ_LOWER))
    x = np.array(xv)
    assert cp.pair_of == (1, 0)
    res = residuals(cp, [x], DualPoint([0.0, 0.0]))
    assert res.r_p == pytest.approx(abs(float(a @ x) - beta), abs=1e-9)
    assert cp.equality_violation([x])[0] == pytest.approx(abs(float(a @ x) - beta), abs=1e-9)


def test_coupling_json_round_trip():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(1, 2))
    blocks = (np.vstack([a, -a, rng.normal(size=(1, 2))]), rng.normal(size=(3, 1)))
    blocks[1][1] = -blocks[1][0]
    cp = BlockAffineCoupling(blocks, np.array([0.3, -0.3, 1.0]), (EQ_UPPER, EQ_LOWER, INEQ))
    back = coupling_from_dict(coupling_to_dict(cp))
    assert back.row_kind == cp.row_kind and back.pair_of == cp.pair_of
    np.testing.assert_array_equal(back.b, cp.b)
    for B1, B2 in zip(back.blocks, cp.blocks):
        np.testing.assert_array_equal(B1, B2)


def test_block_primal_point_flat_round_trip():
    p = BlockPrimalPoint.from_flat(np.arange(5.0), [2, 3])
    assert [x.tolist() for x in p.blocks] == [[0.0, 1.0], [2.0, 3.0, 4.0]]
    np.testing.assert_array_equal(p.flat(), np.arange(5.0))
