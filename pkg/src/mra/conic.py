"""Conic programs (LP, QP, SOC, rotated SOC) over a single Clarabel backend.

Constraint blocks act on the affine image ``v = A x + b``:

* ``eq``   -- v == 0
* ``le``   -- v <= 0
* ``soc``  -- ||v[1:]||_2 <= v[0]
* ``rsoc`` -- v[0] * v[1] >= ||v[2:]||_2^2,  v[0], v[1] >= 0

Binary flags are handled by depth-first branch-and-bound over Clarabel
relaxations (capped at ``MAX_BINARIES``).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_LIMIT = "numerical-limit"

DEFAULT_TOL = 1e-8
MAX_BINARIES = 25

KINDS = ("eq", "le", "soc", "rsoc")


class SolverError(RuntimeError):
    def __init__(self, msg, outcome=None):
        super().__init__(msg)
        self.outcome = outcome


class TooManyBinaries(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Block:
    kind: str
    A: sp.csr_matrix
    b: np.ndarray

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """minimize ``0.5 x'Px + c'x`` subject to constraint blocks."""

    n: int
    c: np.ndarray
    blocks: tuple[Block, ...]
    P: sp.csc_matrix | None = None
    binary: np.ndarray | None = None
    names: tuple[str, ...] = ()
    _compiled: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.c.shape != (self.n,):
            raise ValueError("objective length must equal the variable count")
        for blk in self.blocks:
            if blk.kind not in KINDS:
                raise ValueError(f"unknown constraint kind {blk.kind!r}")
            if blk.A.shape[1] != self.n:
                raise ValueError("constraint references undeclared variables")
            if blk.kind == "rsoc" and blk.rows < 2:
                raise ValueError("rotated cone needs at least two rows")

    def with_objective(self, c: np.ndarray, P: sp.spmatrix | None = None) -> ConicProgram:
        prog = replace(self, c=np.asarray(c, dtype=float), P=P if P is not None else self.P,
                       _compiled=self._compiled)
        return prog

    def with_blocks(self, extra: Sequence[Block]) -> ConicProgram:
        base = self.compiled()
        prog = replace(self, blocks=self.blocks + tuple(extra), _compiled=[])
        A2, b2, cones2 = _compile_blocks(extra, self.n)
        prog._compiled.append((sp.vstack([base[0], A2], format="csc"), np.concatenate([base[1], b2]),
                               base[2] + cones2))
        return prog

    def with_binary(self, flags: np.ndarray) -> ConicProgram:
        return replace(self, binary=np.asarray(flags, dtype=bool), _compiled=self._compiled)

    def compiled(self):
        if not self._compiled:
            self._compiled.append(_compile_blocks(self.blocks, self.n))
        return self._compiled[0]

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at x."""
        worst = 0.0
        for blk in self.blocks:
            v = blk.A @ x + blk.b
            if blk.kind == "eq":
                worst = max(worst, float(np.max(np.abs(v), initial=0.0)))
            elif blk.kind == "le":
                worst = max(worst, float(np.max(v, initial=0.0)))
            elif blk.kind == "soc":
                worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]))
            else:
                u, w, rest = v[0], v[1], v[2:]
                worst = max(worst, -u, -w, float(np.linalg.norm(np.r_[u - w, 2 * rest]) - (u + w)))
        return worst

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x)
        if self.P is not None:
            val += 0.5 * float(x @ (self.P @ x))
        return val


@dataclass
class SolveOutcome:
    status: str
    point: np.ndarray | None
    objective_value: float
    iterations: int = 0
    solve_time: float = 0.0
    nodes: int = 0
    best_iterate: np.ndarray | None = None
    duals: np.ndarray | None = None

    def __post_init__(self):
        if (self.point is not None) != (self.status == OPTIMAL):
            raise ValueError("point present iff optimal")


def _compile_blocks(blocks: Iterable[Block], n: int):
    mats, rhs, cones = [], [], []
    for blk in blocks:
        A, b = blk.A, blk.b
        if blk.kind == "eq":
            mats.append(A), rhs.append(-b), cones.append(("z", blk.rows))
        elif blk.kind == "le":
            mats.append(A), rhs.append(-b), cones.append(("l", blk.rows))
        elif blk.kind == "soc":
            mats.append(-A), rhs.append(b), cones.append(("q", blk.rows))
        else:
            # (u, w, r) -> (u + w, u - w, 2r) in the standard cone
            k = blk.rows
            T = sp.lil_matrix((k, k))
            T[0, 0] = T[0, 1] = T[1, 0] = 1.0
            T[1, 1] = -1.0
            for j in range(2, k):
                T[j, j] = 2.0
            T = T.tocsr()
            mats.append(-(T @ A)), rhs.append(T @ b), cones.append(("q", k))
    if not mats:
        return sp.csc_matrix((0, n)), np.zeros(0), []
    return sp.vstack(mats, format="csc"), np.concatenate(rhs), cones


def _merge_cones(cones):
    out = []
    for kind, dim in cones:
        if out and kind == out[-1][0] and kind != "q":
            dim += out.pop()[1]
        out.append((kind, dim))
    return out


_CONE_TYPES = {"z": clarabel.ZeroConeT, "l": clarabel.NonnegativeConeT, "q": clarabel.SecondOrderConeT}


def _settings(tol: float):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_infeas_abs = tol
    s.tol_infeas_rel = tol
    s.max_iter = 200
    return s


def _solve_continuous(p: ConicProgram, tol: float, A=None, b=None, cones=None) -> SolveOutcome:
    if A is None:
        A, b, cones = p.compiled()
    P = p.P if p.P is not None else sp.csc_matrix((p.n, p.n))
    P = sp.triu(P, format="csc")
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, p.c, A, b, [_CONE_TYPES[k](d) for k, d in _merge_cones(cones)],
                                    _settings(tol))
    sol = solver.solve()
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    if status == "Solved":
        return SolveOutcome(OPTIMAL, x, float(sol.obj_val), sol.iterations, elapsed, duals=np.asarray(sol.z))
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveOutcome(INFEASIBLE, None, np.inf, sol.iterations, elapsed)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveOutcome(UNBOUNDED, None, -np.inf, sol.iterations, elapsed)
    if status == "AlmostSolved" and np.all(np.isfinite(x)):
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
        # same check against the compiled rows the solver actually saw
        if _compiled_violation(A, b, cones, x) <= 1e2 * tol * scale:
            return SolveOutcome(OPTIMAL, x, float(sol.obj_val), sol.iterations, elapsed, duals=np.asarray(sol.z))
    return SolveOutcome(NUMERICAL_LIMIT, None, float(sol.obj_val), sol.iterations, elapsed, best_iterate=x)


def _compiled_violation(A, b, cones, x) -> float:
    s = b - A @ x
    worst, pos = 0.0, 0
    for kind, d in cones:
        v = s[pos:pos + d]
        if kind == "z":
            worst = max(worst, float(np.max(np.abs(v), initial=0.0)))
        elif kind == "l":
            worst = max(worst, float(np.max(-v, initial=0.0)))
        else:
            worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]))
        pos += d
    return worst


def solve(p: ConicProgram, tol: float = DEFAULT_TOL) -> SolveOutcome:
    if p.binary is None or not np.any(p.binary):
        return _solve_continuous(p, tol)
    idx = np.flatnonzero(p.binary)
    if idx.size > MAX_BINARIES:
        raise TooManyBinaries(f"{idx.size} binaries exceed the exact cap of {MAX_BINARIES}")
    return _branch_and_bound(p, idx, tol)


def _bound_rows(n, idx, lo, hi):
    """Rows encoding lo <= x[idx] <= hi as ``le`` constraints."""
    k = idx.size
    E = sp.csr_matrix((np.ones(k), (np.arange(k), idx)), shape=(k, n))
    return [Block("le", E, -hi), Block("le", -E, lo)]


def _branch_and_bound(p: ConicProgram, idx: np.ndarray, tol: float) -> SolveOutcome:
    int_tol = 1e-6
    base = replace(p, binary=None, _compiled=p._compiled)
    best_x, best_val, nodes, iters = None, np.inf, 0, 0
    t0 = time.perf_counter()
    stack = [(np.zeros(idx.size), np.ones(idx.size))]
    while stack:
        lo, hi = stack.pop()
        nodes += 1
        node = base.with_blocks(_bound_rows(p.n, idx, lo, hi))
        out = _solve_continuous(node, tol)
        iters += out.iterations
        if out.status == UNBOUNDED:
            return SolveOutcome(UNBOUNDED, None, -np.inf, iters, time.perf_counter() - t0, nodes)
        if out.status != OPTIMAL:
            continue
        if out.objective_value >= best_val - tol * (1 + abs(best_val)):
            continue
        vals = out.point[idx]
        frac = np.abs(vals - np.round(vals))
        j = int(np.argmax(frac))
        if frac[j] <= int_tol:
            x = out.point.copy()
            x[idx] = np.round(vals)
            best_x, best_val = x, p.objective(x)
            continue
        # explore the rounding-nearest child first (pushed last)
        down_hi, up_lo = hi.copy(), lo.copy()
        down_hi[j], up_lo[j] = 0.0, 1.0
        children = [(lo, down_hi), (up_lo, hi)]
        if vals[j] >= 0.5:
            children.reverse()
        stack.extend(reversed(children))
    elapsed = time.perf_counter() - t0
    if best_x is None:
        return SolveOutcome(INFEASIBLE, None, np.inf, iters, elapsed, nodes)
    return SolveOutcome(OPTIMAL, best_x, best_val, iters, elapsed, nodes)


def enumerate_binaries(p: ConicProgram, tol: float = DEFAULT_TOL) -> SolveOutcome:
    """Exhaustive enumeration over binary assignments (reference path, small counts)."""
    idx = np.flatnonzero(p.binary)
    base = replace(p, binary=None, _compiled=p._compiled)
    best = SolveOutcome(INFEASIBLE, None, np.inf)
    for bits in itertools.product((0.0, 1.0), repeat=idx.size):
        v = np.array(bits)
        out = _solve_continuous(base.with_blocks(_bound_rows(p.n, idx, v, v)), tol)
        if out.status == OPTIMAL and out.objective_value < best.objective_value - tol:
            x = out.point.copy()
            x[idx] = v
            best = SolveOutcome(OPTIMAL, x, p.objective(x))
    return best


# -- program construction ----------------------------------------------------

class Builder:
    """Incremental construction of a ConicProgram from sparse affine rows."""

    def __init__(self):
        self.n = 0
        self.names: list[str] = []
        self._blocks: list[tuple[str, list, list, list, list]] = []
        self.c: dict[int, float] = {}

    def var(self, size: int = 1, name: str = "x") -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.n += size
        self.names.extend(f"{name}[{k}]" for k in range(size))
        return idx

    def _add(self, kind: str, rows: Sequence["Affine"]):
        data, ri, ci, consts = [], [], [], []
        for r, aff in enumerate(rows):
            for j, v in aff.coef.items():
                ri.append(r), ci.append(j), data.append(v)
            consts.append(aff.const)
        self._blocks.append((kind, data, ri, ci, consts))

    def eq(self, *rows: "Affine"):
        self._add("eq", rows)

    def le(self, *rows: "Affine"):
        self._add("le", rows)

    def soc(self, head: "Affine", tail: Sequence["Affine"]):
        self._add("soc", [head, *tail])

    def rsoc(self, u: "Affine", v: "Affine", w: Sequence["Affine"]):
        self._add("rsoc", [u, v, *w])

    def le_matrix(self, M, cols: np.ndarray, rhs):
        """``M @ x[cols] <= rhs``."""
        M = sp.coo_matrix(M)
        self._blocks.append(("le", list(M.data), list(M.row), list(cols[M.col]), list(-np.broadcast_to(rhs, M.shape[0]))))

    def eq_matrix(self, M, cols: np.ndarray, rhs):
        M = sp.coo_matrix(M)
        self._blocks.append(("eq", list(M.data), list(M.row), list(cols[M.col]), list(-np.broadcast_to(rhs, M.shape[0]))))

    def minimize(self, aff: "Affine"):
        self.c = dict(aff.coef)

    def build(self) -> ConicProgram:
        blocks = []
        for kind, data, ri, ci, consts in self._blocks:
            A = sp.csr_matrix((data, (ri, ci)), shape=(len(consts), self.n))
            blocks.append(Block(kind, A, np.asarray(consts, dtype=float)))
        c = np.zeros(self.n)
        for j, v in self.c.items():
            c[j] += v
        return ConicProgram(self.n, c, tuple(blocks), names=tuple(self.names))


class Affine:
    __slots__ = ("coef", "const")

    def __init__(self, coef: dict[int, float] | None = None, const: float = 0.0):
        self.coef = coef or {}
        self.const = float(const)

    @classmethod
    def of(cls, j: int, a: float = 1.0) -> Affine:
        return cls({int(j): float(a)})

    @classmethod
    def dot(cls, cols: Sequence[int], coefs: Sequence[float], const: float = 0.0) -> Affine:
        coef: dict[int, float] = {}
        for j, a in zip(cols, coefs):
            if a != 0.0:
                coef[int(j)] = coef.get(int(j), 0.0) + float(a)
        return cls(coef, const)

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(dict(self.coef), self.const + float(other))
        coef = dict(self.coef)
        for j, v in other.coef.items():
            coef[j] = coef.get(j, 0.0) + v
        return Affine(coef, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({j: -v for j, v in self.coef.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, a: float):
        return Affine({j: v * a for j, v in self.coef.items()}, self.const * a)

    __rmul__ = __mul__


def geomean_epigraph(bld: Builder, terms: Sequence[Affine], s: Affine) -> None:
    """Constrain ``s <= geomean(terms)`` (and terms >= 0) with a tower of rotated cones.

    Leaves are padded to a power of two with copies of an auxiliary
    ``0 <= h <= tower output`` and ``s <= h``; the fixed point of
    ``h <= (prod(u) * h^pad)^(1/size)`` is exactly the p-term geometric mean.
    """
    p = len(terms)
    if p == 0:
        raise ValueError("geometric mean of zero terms")
    if p == 1:
        bld.le(s - terms[0], -terms[0])
        return
    size = 1 << (p - 1).bit_length()
    leaves = list(terms)
    top = s
    if size > p:
        top = Affine.of(bld.var(1, "gm_pad")[0])
        bld.le(s - top)
        leaves += [top] * (size - p)
    while len(leaves) > 1:
        nxt = []
        for a, b in zip(leaves[0::2], leaves[1::2]):
            w = Affine.of(bld.var(1, "gm")[0])
            bld.rsoc(a, b, [w])
            nxt.append(w)
        leaves = nxt
    bld.le(top - leaves[0])
