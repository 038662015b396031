import numpy as np
import pytest

from mra import _kernels_py, kernels

try:
    from mra import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")


def random_case(seed, K=6, N=4, m=5):
    rng = np.random.default_rng(seed)
    widths = rng.integers(1, N + 1, K)
    offsets = np.r_[0, np.cumsum(widths)].astype(np.int64)
    M = rng.normal(size=(m, offsets[-1]))
    b = rng.normal(size=m)
    sel = np.array([rng.integers(0, w) for w in widths], dtype=np.int64)
    return M, offsets, sel, b


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_python_selection_violation_by_hand():
    M = np.array([[1.0, 2.0, 3.0]])
    offsets = np.array([0, 2, 3], dtype=np.int64)
    r = _kernels_py.selection_violation(M, offsets, np.array([1, 0], dtype=np.int64), np.array([4.0]))
    np.testing.assert_allclose(r, [1.0])
    assert _kernels_py.positive_sum(np.array([1.0, -2.0, 0.5])) == 1.5


@needs_ext
@pytest.mark.parametrize("seed", range(10))
def test_compiled_matches_python(seed):
    M, offsets, sel, b = random_case(seed)
    np.testing.assert_allclose(_kernels.selection_violation(M, offsets, sel, b),
                               _kernels_py.selection_violation(M, offsets, sel, b), rtol=1e-12, atol=1e-12)
    a = _kernels.greedy_round(M, offsets, sel.copy(), b)
    p = _kernels_py.greedy_round(M, offsets, sel.copy(), b)
    np.testing.assert_array_equal(np.asarray(a[0]), np.asarray(p[0]))
    assert a[1] == pytest.approx(p[1], abs=1e-12)
    assert a[2:] == p[2:]


@pytest.mark.parametrize("seed", range(5))
def test_greedy_monotone_and_bounded(seed):
    M, offsets, sel, b = random_case(seed, K=8, N=3)
    start = _kernels_py.positive_sum(_kernels_py.selection_violation(M, offsets, sel, b))
    out, rp, moves, passes = kernels.greedy_round(M, offsets, sel.copy(), b)
    assert rp <= start + 1e-12
    assert moves <= int(np.prod(np.diff(offsets)))
