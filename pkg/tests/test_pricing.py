import math

import numpy as np
import pytest
from scipy.optimize import minimize

from mra import benchmarks
from mra.agents import conjugate_oracle
from mra.core import BlockAffineCoupling, BlockPrimalPoint, DualPoint, dual_value, local_prices
from mra.pricing import (AccpmState, Cut, LocalizationCollapsed, PriceBox, SubgradState, ZeroCut, accpm_center, accpm_step, average_weights,
                         averaged_dual, generate_cut, make_price_box, subgradient_step)


def exact_oracle(inst):
    def oracle(dual):
        ys = local_prices(inst.coupling, dual)
        rs = [conjugate_oracle(ag, y) for ag, y in zip(inst.agents, ys)]
        return BlockPrimalPoint(tuple(r.x for r in rs), tuple(r.f_value for r in rs))
    return oracle


def run_accpm(inst, steps):
    lam_star = inst.reference.lambda_star
    state = AccpmState.initial(make_price_box(lam_star.min(), max(lam_star.max(), 1e-9), inst.coupling.m))
    oracle = exact_oracle(inst)
    gs = []
    for _ in range(steps):
        try:
            lam, resp, cut, _ = accpm_step(state, inst.coupling, oracle)
        except LocalizationCollapsed:
            # no interior left: the localization set has shrunk to the optimum
            break
        gs.append(dual_value(inst.coupling, DualPoint(lam), resp))
    return state, gs


@pytest.fixture(scope="module")
def toy_run(toy_ra):
    return run_accpm(toy_ra, 5)


def test_cut_scalar_example():
    cp = BlockAffineCoupling((np.array([[1.0]]),), np.array([1.0]))
    cut = generate_cut(cp, [np.array([2.0])], DualPoint([0.3]))
    assert cut.c[0] == pytest.approx(-1.0) and cut.d == pytest.approx(-0.3)
    assert cut.contains(np.array([0.5])) and not cut.contains(np.array([0.2]))
    assert cut.n == pytest.approx(math.sqrt(1 + 0.09))


def test_zero_cut_signals_convergence():
    cp = BlockAffineCoupling((np.array([[1.0]]),), np.array([1.0]))
    with pytest.raises(ZeroCut):
        generate_cut(cp, [np.array([1.0])], DualPoint([0.3]))


def test_subgradient_clamp_example():
    box = PriceBox(np.zeros(2), np.full(2, 3.0))
    st = subgradient_step(SubgradState(np.ones(2), "1/k"), 0.0, np.array([2.0, -1.0]), box, alpha=0.5)
    np.testing.assert_allclose(st.lam, [0.0, 1.5])
    assert not st.stopped


def test_subgradient_zero_q_stops():
    box = PriceBox(np.zeros(2), np.full(2, 3.0))
    st = subgradient_step(SubgradState(np.ones(2), "1/k"), 0.0, np.zeros(2), box)
    np.testing.assert_array_equal(st.lam, [1.0, 1.0])
    assert st.stopped


@pytest.mark.parametrize("peak,expect", [(2.0, 2.0), (5.0, 3.0)])
def test_subgradient_quadratic_toy(peak, expect):
    # g(lam) = -(lam - peak)^2; q is a subgradient of -g
    box = PriceBox(np.zeros(1), np.full(1, 3.0))
    st = SubgradState(np.array([0.5]), "1/sqrt(k)")
    best = []
    for _ in range(10_000):
        lam = st.lam.copy()
        st = subgradient_step(st, -float((lam[0] - peak) ** 2), 2 * (lam - peak), box, patience=10**6)
        assert box.contains(st.lam)
        best.append(st.g_best)
    assert abs(st.lam[0] - expect) <= 1e-3
    assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))


def test_subgradient_state_round_trip():
    st = SubgradState(np.array([1.0, 2.0]), "10/k", 4, -1.5, np.array([0.5, 0.5]), 2, False)
    back = SubgradState.from_dict(st.to_dict())
    assert back.to_dict() == st.to_dict()
    with pytest.raises(ValueError):
        SubgradState(np.zeros(1), "2/k")


def test_center_without_cuts():
    st = AccpmState([], np.array([0.5, 0.3]), 0)
    accpm_center(st)
    np.testing.assert_allclose(st.z, [1.0, 0.0], atol=1e-8)


def test_center_one_cut_matches_direct_minimization():
    cut = Cut(np.array([1.0]), 0.5)
    st = AccpmState([cut], np.array([1.0, 0.0]), 0)
    accpm_center(st)

    def F(z):
        t, l = z
        s = (t * 0.5 - l) / math.sqrt(1.25)
        if t <= 0 or s <= 0:
            return np.inf
        return -math.log(s) - math.log(t) + 0.5 * (t * t + l * l)

    ref = minimize(F, [1.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 10000})
    np.testing.assert_allclose(st.z, ref.x, atol=1e-6)
    assert np.all(st.slacks() > 0)


def test_make_price_box():
    box = make_price_box(3.0, 3.0)
    assert box.lower[0] == pytest.approx(1.0) and box.upper[0] == pytest.approx(9.0)
    assert make_price_box(0.0, 2.0).lower[0] == 0.0
    with pytest.raises(ValueError):
        make_price_box(-1.0, 2.0)
    box = make_price_box([1.0, 2.0], [2.0, 4.0])
    cuts = box.cuts()
    assert len(cuts) == 4
    corners = [np.array([a, b]) for a in (box.lower[0], box.upper[0]) for b in (box.lower[1], box.upper[1])]
    rng = np.random.default_rng(0)
    inside = corners + [rng.uniform(box.lower, box.upper) for _ in range(20)]
    for cut in cuts:
        assert all(cut.contains(p, tol=1e-12) for p in inside)


def test_accpm_steps_neutral_interior(toy_ra, toy_run):
    state, _ = toy_run
    assert len(state.cuts) == 2 * toy_ra.coupling.m + 5
    for lam, cut in state.queried:
        assert abs(cut.c @ lam - cut.d) <= 1e-9 * cut.n
    assert state.z[0] > 0 and np.all(state.slacks() > 0)


def test_cuts_contain_reference_prices(toy_ra):
    state, _ = run_accpm(toy_ra, 30)
    lam_star = toy_ra.reference.lambda_star
    for _, cut in state.queried:
        assert cut.c @ lam_star <= cut.d + 1e-8


def test_accpm_reaches_dual_optimum():
    inst = benchmarks.generate("ra", 3, K=3, m=2)
    inst.ensure_reference()
    _, gs = run_accpm(inst, 100)
    best = np.maximum.accumulate(gs)
    g_star = inst.reference.f_star
    assert np.all(np.diff(best) >= 0)
    assert abs(best[-1] - g_star) <= 0.01 * abs(g_star)


def test_supergradient_inequality(toy_ra):
    rng = np.random.default_rng(1)
    oracle = exact_oracle(toy_ra)
    cp = toy_ra.coupling
    lam = toy_ra.reference.lambda_star * 1.5 + 0.01
    resp = oracle(DualPoint(lam))
    g = dual_value(cp, DualPoint(lam), resp)
    cut = generate_cut(cp, resp, DualPoint(lam))
    for _ in range(5):
        mu = lam * rng.uniform(0, 2, lam.size)
        g_mu = dual_value(cp, DualPoint(mu), oracle(DualPoint(mu)))
        assert g_mu <= g - cut.c @ (mu - lam) + 1e-7


def test_averaged_dual_single_query():
    lam1 = np.array([0.4, 1.2])
    cut = Cut(np.array([1.0, -1.0]), -0.8)
    out, w = averaged_dual([(lam1, cut)], np.array([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(w.theta, [1.0])
    np.testing.assert_allclose(out, lam1)


def test_averaged_dual_symmetric_is_mean():
    q = [(np.array([1.0]), Cut(np.array([1.0]), 1.0)), (np.array([3.0]), Cut(np.array([-1.0]), 1.0))]
    out, w = averaged_dual(q, np.array([1.0, 0.0]))
    np.testing.assert_allclose(w.theta, [0.5, 0.5])
    np.testing.assert_allclose(out, [2.0])


def test_averaged_dual_recompute(toy_run):
    state, _ = toy_run
    out, w = averaged_dual(state.queried, state.z)
    t, lb = state.z[0], state.z[1:]
    pis = []
    for _, cut in state.queried:
        norm = math.sqrt(cut.c @ cut.c + cut.d ** 2)
        slack = (t * cut.d - cut.c @ lb) / norm
        pis.append((1.0 / slack) / norm)
    theta = np.array(pis) / sum(pis)
    np.testing.assert_allclose(w.theta, theta, rtol=1e-12)
    np.testing.assert_allclose(out, sum(th * lam for th, (lam, _) in zip(theta, state.queried)), rtol=1e-12)
    assert abs(w.theta.sum() - 1.0) <= 1e-10


def test_averaged_dual_drops_nonpositive_slack():
    q = [(np.array([1.0]), Cut(np.array([1.0]), 1.0)), (np.array([3.0]), Cut(np.array([1.0]), -1.0))]
    w = average_weights(q, np.array([1.0, 0.0]))
    assert w.dropped == [1]
    np.testing.assert_allclose(w.theta, [1.0, 0.0])


def test_accpm_state_round_trip(toy_run):
    state, _ = toy_run
    back = AccpmState.from_dict(state.to_dict())
    np.testing.assert_array_equal(back.G, state.G)
    np.testing.assert_array_equal(back.z, state.z)
    assert len(back.queried) == len(state.queried)
