import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from mra import benchmarks
from mra.agents import AgentModel
from mra.conic import Builder


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture(scope="session")
def toy_ra():
    inst = benchmarks.generate("ra", 0, K=5, m=3)
    inst.ensure_reference()
    return inst


def linear_agent(i, c, total=None, upper=None):
    """f(x) = c'x on {x >= 0} with optional 1'x = total and x <= upper."""
    c = np.asarray(c, dtype=float)
    n = c.size
    bld = Builder()
    x = bld.var(n)
    bld.le_matrix(-sp.eye(n), x, 0.0)
    if total is not None:
        bld.eq_matrix(np.ones((1, n)), x, total)
    if upper is not None:
        bld.le_matrix(sp.eye(n), x, upper)
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[x] = c
    return AgentModel(i, n, prog, obj)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""
    def _verdict(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        assert ok, line
    return _verdict


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
