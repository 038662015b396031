"""Price discovery: projected dual subgradient and homogeneous ACCPM, plus the averaged dual iterate."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import BlockAffineCoupling, BlockPrimalPoint, DualPoint

STEP_RULES: dict[str, Callable[[int], float]] = {
    "0.1/sqrt(k)": lambda k: 0.1 / math.sqrt(k),
    "1/sqrt(k)": lambda k: 1.0 / math.sqrt(k),
    "1/k": lambda k: 1.0 / k,
    "10/k": lambda k: 10.0 / k,
}


class ZeroCut(Exception):
    """The oracle returned a zero subgradient: the query price is dual optimal."""


class LocalizationCollapsed(Exception):
    """The localization set has no interior left in floating point; treat as converged."""


@dataclass(frozen=True, eq=False)
class PriceBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo < 0) or np.any(lo > hi):
            raise ValueError("price box needs 0 <= lower <= upper of equal shape")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self) -> int:
        return self.lower.size

    def clamp(self, lam: np.ndarray) -> np.ndarray:
        return np.clip(lam, self.lower, self.upper)

    def contains(self, lam: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(lam >= self.lower - tol) and np.all(lam <= self.upper + tol))

    def cuts(self) -> list[Cut]:
        """``2m`` halfspaces ``-lam_i <= -lower_i`` and ``lam_i <= upper_i``."""
        out = []
        for i in range(self.m):
            e = np.zeros(self.m)
            e[i] = 1.0
            out.append(Cut(-e, -self.lower[i], source=-1))
            out.append(Cut(e.copy(), self.upper[i], source=-1))
        return out


def make_price_box(p_min, p_max, m: int | None = None) -> PriceBox:
    """Box from one third of the smallest to three times the largest estimated price."""
    p_min = np.asarray(p_min, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    if m is not None:
        p_min = np.broadcast_to(p_min, (m,)).copy()
        p_max = np.broadcast_to(p_max, (m,)).copy()
    if np.any(p_min < 0) or np.any(p_max < 0):
        raise ValueError("price estimates must be nonnegative")
    if np.any(p_min > p_max):
        raise ValueError("p_min exceeds p_max")
    return PriceBox(np.atleast_1d(p_min / 3.0), np.atleast_1d(3.0 * p_max))


@dataclass(frozen=True, eq=False)
class Cut:
    """Halfspace ``c' lam <= d``; ``n`` normalizes its homogenized row ``(d, -c)``."""

    c: np.ndarray
    d: float
    source: int = 0
    n: float = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))
        n = math.sqrt(float(c @ c) + self.d ** 2)
        if n == 0.0:
            raise ZeroCut("zero cut")
        object.__setattr__(self, "n", n)

    @property
    def row(self) -> np.ndarray:
        return np.r_[self.d, -self.c]

    def contains(self, lam: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(self.c @ lam <= self.d + tol)


def generate_cut(coupling: BlockAffineCoupling, oracle_x: BlockPrimalPoint | list, dual: DualPoint,
                 source: int = 0, zero_tol: float = 0.0) -> Cut:
    """Neutral cut through ``lam`` from exact responses: ``c = b - Ax``, ``d = c' lam``."""
    c = coupling.b - coupling.Ax(oracle_x)
    if float(np.linalg.norm(c)) <= zero_tol:
        raise ZeroCut("zero subgradient: query price is optimal")
    return Cut(c, float(c @ dual.lam), source)


# -- projected subgradient ---------------------------------------------------

@dataclass(eq=False)
class SubgradState:
    lam: np.ndarray
    rule: str
    k: int = 1
    g_best: float = -np.inf
    lam_best: np.ndarray | None = None
    stall: int = 0
    stopped: bool = False

    def __post_init__(self):
        if self.rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.rule!r}; choose from {sorted(STEP_RULES)}")
        self.lam = np.asarray(self.lam, dtype=float)

    def to_dict(self) -> dict[str, Any]:
        return {"lam": self.lam.tolist(), "rule": self.rule, "k": self.k, "g_best": self.g_best,
                "lam_best": None if self.lam_best is None else self.lam_best.tolist(),
                "stall": self.stall, "stopped": self.stopped}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SubgradState:
        lb = d.get("lam_best")
        return cls(np.array(d["lam"]), d["rule"], d["k"], d["g_best"],
                   None if lb is None else np.array(lb), d["stall"], d["stopped"])


def step_size(rule: str, k: int) -> float:
    return STEP_RULES[rule](max(k, 1))


def subgradient_step(state: SubgradState, g: float, q: np.ndarray, box: PriceBox,
                     alpha: float | None = None, patience: int = 50, tol: float = 1e-9) -> SubgradState:
    """One projected step ``lam <- clamp(lam - alpha q)`` with ``q`` a subgradient of ``-g`` at ``lam``."""
    q = np.asarray(q, dtype=float)
    a = step_size(state.rule, state.k) if alpha is None else alpha
    if g > state.g_best + tol:
        stall, g_best, lam_best = 0, g, state.lam.copy()
    else:
        stall, g_best, lam_best = state.stall + 1, max(state.g_best, g), state.lam_best
    stopped = not np.any(q) or stall >= patience
    lam = box.clamp(state.lam - a * q)
    return SubgradState(lam, state.rule, state.k + 1, g_best, lam_best, stall, stopped)


# -- homogeneous ACCPM ---------------------------------------------------------

class CenteringWarning(UserWarning):
    pass


@dataclass(eq=False)
class AccpmState:
    """Localization set in ``z = (t, lam_bar)`` with the proximal barrier.

    ``cuts`` starts with the box cuts; ``queried`` holds the neutral cuts
    and their query prices, in order.
    """

    cuts: list[Cut]
    z: np.ndarray
    n_box: int
    queried: list[tuple[np.ndarray, Cut]] = field(default_factory=list)
    newton_steps: int = 0
    flagged: bool = False
    _G: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, box: PriceBox, **center_kw) -> AccpmState:
        cuts = box.cuts()
        # a point strictly inside every box cut
        mid = 0.5 * (box.lower + box.upper)
        st = cls(cuts, np.r_[1.0, mid], len(cuts))
        if not np.all(st.slacks() > 0):
            raise ValueError("price box is degenerate; need lower < upper")
        accpm_center(st, **center_kw)
        return st

    @property
    def m(self) -> int:
        return self.z.size - 1

    @property
    def G(self) -> np.ndarray:
        """Normalized homogenized cut rows, one per cut."""
        if self._G is None or self._G.shape[0] != len(self.cuts):
            self._G = np.array([c.row / c.n for c in self.cuts]).reshape(len(self.cuts), self.z.size)
        return self._G

    def slacks(self, z: np.ndarray | None = None) -> np.ndarray:
        return self.G @ (self.z if z is None else z)

    def lam(self) -> np.ndarray:
        return self.z[1:] / self.z[0]

    def barrier(self, z: np.ndarray, s: np.ndarray | None = None) -> float:
        s = self.G @ z if s is None else s
        if z[0] <= 0 or np.any(s <= 0):
            return np.inf
        return float(-np.log(s).sum() - math.log(z[0]) + 0.5 * z @ z)

    def add_cut(self, cut: Cut, lam: np.ndarray) -> None:
        if self._G is not None and self._G.shape[0] == len(self.cuts):
            self._G = np.vstack([self._G, cut.row / cut.n])
        self.cuts.append(cut)
        self.queried.append((np.asarray(lam, dtype=float).copy(), cut))

    def to_dict(self) -> dict[str, Any]:
        return {
            "z": self.z.tolist(),
            "n_box": self.n_box,
            "cuts": [{"c": c.c.tolist(), "d": c.d, "source": c.source} for c in self.cuts],
            "queried_lam": [lam.tolist() for lam, _ in self.queried],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AccpmState:
        cuts = [Cut(np.array(c["c"]), c["d"], c["source"]) for c in d["cuts"]]
        nb = d["n_box"]
        queried = [(np.array(lam), cut) for lam, cut in zip(d["queried_lam"], cuts[nb:])]
        return cls(cuts, np.array(d["z"]), nb, queried)


def _grad_hess(G, z, s):
    inv = 1.0 / s
    grad = -G.T @ inv + z
    grad[0] -= 1.0 / z[0]
    H = (G * (inv ** 2)[:, None]).T @ G + np.eye(z.size)
    H[0, 0] += 1.0 / z[0] ** 2
    return grad, H


def accpm_center(state: AccpmState, newton_tol: float = 1e-8, max_newton: int = 100,
                 alpha: float = 0.25, beta: float = 0.5) -> np.ndarray:
    """Minimize the barrier by damped Newton from the current (interior) ``z``.

    Converged when ``||grad|| <= newton_tol`` or the squared Newton decrement
    is at most ``newton_tol``; the second test stays meaningful once slacks
    shrink toward zero and the gradient is dominated by rounding.
    """
    G = state.G
    z = state.z.copy()
    s = G @ z
    if z[0] <= 0 or np.any(s <= 0):
        z = _push_inside(G, z)
        s = G @ z
    Fz = state.barrier(z)
    ok = False
    steps = 0
    while steps < max_newton:
        grad, H = _grad_hess(G, z, s)
        if np.linalg.norm(grad) <= newton_tol:
            ok = True
            break
        try:
            L = np.linalg.cholesky(H)
            dz = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
        except np.linalg.LinAlgError:
            dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = float(grad @ dz)
        if -slope <= newton_tol:
            # one polishing full step, kept only if it stays interior and does not increase F
            zn = z + dz
            sn = G @ zn
            if zn[0] > 0 and np.all(sn > 0):
                Fn = state.barrier(zn, sn)
                if Fn <= Fz:
                    z, s, Fz = zn, sn, Fn
            ok = True
            break
        steps += 1
        h = 1.0
        while h > 1e-20:
            zn = z + h * dz
            sn = G @ zn
            if zn[0] > 0 and np.all(sn > 0):
                Fn = state.barrier(zn, sn)
                if Fn <= Fz + alpha * h * slope:
                    break
            h *= beta
        else:
            break
        z, s, Fz = zn, sn, Fn
    if not ok:
        warnings.warn(f"centering stopped after {steps} Newton steps", CenteringWarning)
    state.flagged = not ok
    state.newton_steps = steps
    state.z = z
    return z


def _push_inside(G: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Move along the inward normal of the nonpositive rows until every slack is positive."""
    s = G @ z
    bad = s <= 0
    d = G[bad].sum(axis=0)
    d /= np.linalg.norm(d)
    # largest step keeping currently positive slacks positive, then halve
    Gd = G @ d
    dec = (~bad) & (Gd < 0)
    h = float(np.min(-s[dec] / Gd[dec])) if np.any(dec) else 1.0
    if z[0] > 0 and d[0] < 0:
        h = min(h, -z[0] / d[0])
    h = 0.5 * min(h, 1.0)
    for _ in range(200):
        zn = z + h * d
        if zn[0] > 0 and np.all(G @ zn > 0):
            return zn
        h *= 0.5
    raise LocalizationCollapsed("could not restore interiority")


def warm_start(state: AccpmState) -> None:
    """Step off the newest cut (zero slack at the old center) along its inward normal."""
    G = state.G
    a = G[-1]
    s = G @ state.z
    Ga = G @ a
    dec = Ga < 0
    dec[-1] = False
    h = float(np.min(-s[dec] / Ga[dec])) if np.any(dec) else np.inf
    if a[0] < 0:
        h = min(h, -state.z[0] / a[0])
    h = 0.5 * min(h, 1.0)
    for _ in range(200):
        zn = state.z + h * a
        if zn[0] > 0 and np.all(G @ zn > 0):
            state.z = zn
            return
        h *= 0.5
    raise LocalizationCollapsed("no interior point left after the newest cut")


def accpm_step(state: AccpmState, coupling: BlockAffineCoupling,
               oracle: Callable[[DualPoint], BlockPrimalPoint], **center_kw):
    """Query at the current center, add the neutral cut, recenter.

    Returns ``(lam_queried, responses, cut, lam_next)``.
    """
    lam = state.lam()
    dual = DualPoint(np.maximum(lam, 0.0))
    resp = oracle(dual)
    cut = generate_cut(coupling, resp, dual, source=len(state.queried) + 1)
    state.add_cut(cut, dual.lam)
    warm_start(state)
    accpm_center(state, **center_kw)
    return dual.lam, resp, cut, state.lam()


# -- averaged dual -------------------------------------------------------------

@dataclass(eq=False)
class DualAverageWeights:
    beta: np.ndarray
    pi: np.ndarray
    P: float
    theta: np.ndarray
    kept: np.ndarray
    dropped: list[int]


def average_weights(queried: list[tuple[np.ndarray, Cut]], z_ref: np.ndarray) -> DualAverageWeights:
    """Weights of the averaged dual from the query cuts and a reference center ``z_ref = (t, lam_bar)``.

    For query ``i`` the unit oracle is ``(-d_i, c_i)/n_i``; its slack at
    ``z_ref`` is ``(t d_i - c_i' lam_bar)/n_i``; ``pi_i = beta_i/n_i``.
    """
    if not queried:
        raise ValueError("no queried cuts to average")
    t, lb = z_ref[0], z_ref[1:]
    slack = np.array([(t * cut.d - cut.c @ lb) / cut.n for _, cut in queried])
    norms = np.array([cut.n for _, cut in queried])
    keep = slack > 0
    dropped = [int(i) for i in np.flatnonzero(~keep)]
    if dropped:
        warnings.warn(f"averaged dual: dropping {len(dropped)} indices with nonpositive slack")
    if not np.any(keep):
        raise ValueError("every slack is nonpositive")
    beta = np.where(keep, 1.0 / np.where(keep, slack, 1.0), 0.0)
    pi = beta / norms
    P = float(pi.sum())
    return DualAverageWeights(beta, pi, P, pi / P, keep, dropped)


def averaged_dual(queried: list[tuple[np.ndarray, Cut]], z_ref: np.ndarray) -> tuple[np.ndarray, DualAverageWeights]:
    w = average_weights(queried, z_ref)
    lams = np.array([lam for lam, _ in queried])
    return w.theta @ lams, w
