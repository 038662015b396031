"""MRA primal recovery: convex blending LP, exact one-hot MILP, and sampling + greedy rounding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import kernels
from .agents import ResponseBundle
from .conic import MAX_BINARIES, OPTIMAL, Builder, TooManyBinaries, solve
from .core import BlockAffineCoupling, BlockPrimalPoint, DualPoint, Residuals, residuals_from_violation

RP_PLUS_RC = "rp_plus_rc"
RP_ONLY = "rp_only"
CONVEX = "convex"
INTEGRAL_EXACT = "integral-exact"
INTEGRAL_HEURISTIC = "integral-heuristic"


@dataclass(frozen=True)
class RecoveryConfig:
    objective_mode: str = RP_PLUS_RC
    selection_mode: str = CONVEX
    samples: int = 16
    history: int = 1
    seed: int = 0
    tol: float = 1e-9

    def __post_init__(self):
        if self.objective_mode not in (RP_PLUS_RC, RP_ONLY):
            raise ValueError(f"unknown objective mode {self.objective_mode!r}")
        if self.selection_mode not in (CONVEX, INTEGRAL_EXACT, INTEGRAL_HEURISTIC):
            raise ValueError(f"unknown selection mode {self.selection_mode!r}")
        if self.samples < 1 or self.history < 1:
            raise ValueError("samples and history must be >= 1")


@dataclass(eq=False)
class RecoveryResult:
    x_bar: BlockPrimalPoint
    weights: list[np.ndarray]
    residuals: Residuals
    lp_objective: float
    fallback: bool = False
    moves: int = 0


def _stack(bundles: Sequence[ResponseBundle], coupling: BlockAffineCoupling):
    if len(bundles) != coupling.K:
        raise ValueError(f"{len(bundles)} bundles for {coupling.K} agents")
    for bd, B in zip(bundles, coupling.blocks):
        if bd.Z.shape[0] != B.shape[1]:
            raise ValueError("bundle block dimension does not match the coupling")
    AZ = np.hstack([B @ bd.Z for B, bd in zip(coupling.blocks, bundles)])
    offsets = np.r_[0, np.cumsum([bd.width for bd in bundles])].astype(np.int64)
    return AZ, offsets


def _result(bundles, coupling, lam, weights, lp_obj, **kw) -> RecoveryResult:
    xs = [bd.Z @ u for bd, u in zip(bundles, weights)]
    r = coupling.Ax(xs) - coupling.b
    return RecoveryResult(BlockPrimalPoint(tuple(xs)), weights, residuals_from_violation(r, lam), lp_obj, **kw)


def _one_hot(bundles, sel) -> list[np.ndarray]:
    out = []
    for bd, j in zip(bundles, sel):
        u = np.zeros(bd.width)
        u[int(j)] = 1.0
        out.append(u)
    return out


def _simplex_rows(offsets: np.ndarray) -> sp.csr_matrix:
    K = len(offsets) - 1
    N = int(offsets[-1])
    rows = np.repeat(np.arange(K), np.diff(offsets))
    return sp.csr_matrix((np.ones(N), (rows, np.arange(N))), shape=(K, N))


def _blend_lp(AZ, offsets, b, lam, with_rc: bool):
    """Variables ``(u, s, w, v)`` with ``v = AZ u - b``, ``s >= v``, ``w >= |v|``."""
    m, N = AZ.shape
    K = len(offsets) - 1
    I = sp.eye(m, format="csr")
    O = sp.csr_matrix((m, m))
    Omn = sp.csr_matrix((m, N))
    A_eq = sp.vstack([
        sp.hstack([sp.csr_matrix(AZ), O, O, -I]),
        sp.hstack([_simplex_rows(offsets), sp.csr_matrix((K, 3 * m))]),
    ], format="csr")
    b_eq = np.r_[b, np.ones(K)]
    A_ub = sp.vstack([
        sp.hstack([Omn, -I, O, I]),
        sp.hstack([Omn, O, -I, I]),
        sp.hstack([Omn, O, -I, -I]),
    ], format="csr")
    c = np.r_[np.zeros(N), np.ones(m), lam if with_rc else np.zeros(m), np.zeros(m)]
    bounds = [(0, None)] * (N + 2 * m) + [(None, None)] * m
    return linprog(c, A_ub=A_ub, b_ub=np.zeros(3 * m), A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")


def recover_convex(bundles: Sequence[ResponseBundle], coupling: BlockAffineCoupling, dual: DualPoint,
                   config: RecoveryConfig = RecoveryConfig()) -> RecoveryResult:
    """Blend each agent's responses with simplex weights to minimize ``r_p (+ r_c)``.

    LP over ``u_i in simplex``, ``s >= A xbar - b, s >= 0`` and, for
    ``rp_plus_rc``, ``w >= |A xbar - b|``; objective ``1's (+ lambda'w)``.
    The exact responses are always a candidate, so the result never scores
    worse than them.
    """
    lam = dual.lam
    AZ, offsets = _stack(bundles, coupling)
    K = len(bundles)
    with_rc = config.objective_mode == RP_PLUS_RC
    exact = _result(bundles, coupling, lam, _one_hot(bundles, np.zeros(K, dtype=int)), np.nan)
    out = _blend_lp(AZ, offsets, coupling.b, lam, with_rc)
    if out.status != 0:
        warnings.warn(f"recovery LP failed ({out.message}); returning the exact responses")
        exact.fallback = True
        return exact
    uu = np.maximum(out.x[: AZ.shape[1]], 0.0)
    weights = []
    for i in range(K):
        ui = uu[offsets[i]:offsets[i + 1]]
        weights.append(ui / ui.sum())
    res = _result(bundles, coupling, lam, weights, float(out.fun))

    def score(r):
        return r.residuals.total if with_rc else r.residuals.r_p
    if score(res) > score(exact):
        exact.lp_objective = float(out.fun)
        return exact
    return res


def _rp(AZ, offsets, sel, b) -> float:
    return kernels.positive_sum(kernels.selection_violation(AZ, offsets, np.asarray(sel, dtype=np.int64), b))


def greedy_round(selection: Sequence[int], bundles: Sequence[ResponseBundle], coupling: BlockAffineCoupling,
                 _stacked=None) -> tuple[np.ndarray, float, int]:
    """Per-agent coordinate descent on r_p; returns ``(selection, r_p, moves)``."""
    AZ, offsets = _stacked if _stacked is not None else _stack(bundles, coupling)
    sel = np.asarray(selection, dtype=np.int64)
    if sel.shape != (len(bundles),) or np.any(sel < 0) or np.any(sel >= np.diff(offsets)):
        raise ValueError("selection must pick one valid column per agent")
    out, rp, moves, _ = kernels.greedy_round(AZ, offsets, sel, coupling.b)
    return np.asarray(out), rp, moves


def recover_milp_heuristic(bundles: Sequence[ResponseBundle], coupling: BlockAffineCoupling, dual: DualPoint,
                           config: RecoveryConfig = RecoveryConfig()) -> RecoveryResult:
    """Relax, sample one column per agent from the relaxed weights, greedy-round, keep the best.

    Fractional weights are read as a categorical distribution per agent so
    every sample respects the one-hot constraint.
    """
    relaxed = recover_convex(bundles, coupling, dual, RecoveryConfig(RP_PLUS_RC, CONVEX, tol=config.tol))
    stacked = _stack(bundles, coupling)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(7,)))
    best_sel, best_rp, total_moves = None, np.inf, 0
    for _ in range(config.samples):
        sel = np.array([rng.choice(u.size, p=u / u.sum()) for u in relaxed.weights], dtype=np.int64)
        sel, rp, moves = greedy_round(sel, bundles, coupling, stacked)
        total_moves += moves
        if rp < best_rp:
            best_sel, best_rp = sel, rp
    return _result(bundles, coupling, dual.lam, _one_hot(bundles, best_sel), best_rp, moves=total_moves)


def _milp(AZ, offsets, b, fixed: dict[int, int], tol: float = 1e-11):
    m, N = AZ.shape
    K = len(offsets) - 1
    bld = Builder()
    u = bld.var(N, "u")
    s = bld.var(m, "s")
    eye = sp.eye(m)
    bld.le_matrix(sp.hstack([sp.csr_matrix(AZ), -eye]), np.r_[u, s], b)
    bld.le_matrix(-eye, s, 0.0)
    bld.le_matrix(-sp.eye(N), u, 0.0)
    bld.le_matrix(sp.eye(N), u, 1.0)
    rows = np.repeat(np.arange(K), np.diff(offsets))
    bld.eq_matrix(sp.csr_matrix((np.ones(N), (rows, np.arange(N))), shape=(K, N)), u, 1.0)
    for i, j in fixed.items():
        e = np.zeros((1, N))
        e[0, offsets[i] + j] = 1.0
        bld.eq_matrix(e, u, 1.0)
    prog = bld.build()
    c = np.zeros(prog.n)
    c[s] = 1.0
    flags = np.zeros(prog.n, dtype=bool)
    flags[u] = True
    out = solve(prog.with_objective(c).with_binary(flags), tol)
    if out.status != OPTIMAL:
        return None, np.inf
    sel = [int(np.argmax(out.point[u][offsets[i]:offsets[i + 1]])) for i in range(K)]
    return sel, out.objective_value


def _lexicographic_fix(AZ, offsets, b, sel, best):
    """Fix each agent to its lowest column that keeps the optimum.

    Returns the final selection, or a strictly better selection found on the
    way (the first solve stopped on a near-tie) as ``(None, better)``.
    """
    fixed: dict[int, int] = {}
    slack = 1e-9 * (1.0 + best)
    for i in range(len(offsets) - 1):
        for j in range(int(offsets[i + 1] - offsets[i])):
            tsel, _ = _milp(AZ, offsets, b, {**fixed, i: j})
            if tsel is None:
                continue
            trp = _rp(AZ, offsets, tsel, b)
            if trp < best - slack:
                return None, (tsel, trp)
            if trp <= best + slack:
                fixed[i] = j
                break
        else:
            fixed[i] = sel[i]
    return [fixed[i] for i in range(len(offsets) - 1)], None


def recover_milp_exact(bundles: Sequence[ResponseBundle], coupling: BlockAffineCoupling,
                       config: RecoveryConfig = RecoveryConfig(), dual: DualPoint | None = None) -> RecoveryResult:
    """Minimum-r_p one-hot selection by branch-and-bound; ties go to the lowest column indices.

    Raises TooManyBinaries above the exact cap; use the heuristic there.
    """
    AZ, offsets = _stack(bundles, coupling)
    if offsets[-1] > MAX_BINARIES:
        raise TooManyBinaries(f"{offsets[-1]} binaries exceed {MAX_BINARIES}; use recover_milp_heuristic")
    b = coupling.b
    sel, _ = _milp(AZ, offsets, b, {})
    if sel is None:
        raise RuntimeError("recovery MILP failed")
    best = _rp(AZ, offsets, sel, b)
    while True:
        final, better = _lexicographic_fix(AZ, offsets, b, sel, best)
        if final is not None:
            break
        sel, best = better
    lam = dual.lam if dual is not None else np.zeros(coupling.m)
    return _result(bundles, coupling, lam, _one_hot(bundles, final), _rp(AZ, offsets, final, b))


def recover(bundles, coupling, dual, config: RecoveryConfig) -> RecoveryResult:
    if config.selection_mode == CONVEX:
        return recover_convex(bundles, coupling, dual, config)
    if config.selection_mode == INTEGRAL_EXACT:
        return recover_milp_exact(bundles, coupling, config, dual)
    return recover_milp_heuristic(bundles, coupling, dual, config)
