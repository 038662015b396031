"""Agent models, the exact conjugate-subgradient oracle, and multiple-response bundles."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .conic import OPTIMAL, INFEASIBLE, Block, ConicProgram, SolverError, solve

log = logging.getLogger(__name__)

EXACT = "exact"
VALUE = "value-subopt"
PRICE = "price-perturbed"
_ORACLE_CODE = {VALUE: 1, PRICE: 2}

DEFAULT_ABS_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class OracleResponse:
    x: np.ndarray
    f_value: float
    lagrangian_value: float


@dataclass(eq=False)
class AgentModel:
    """Lifted description of one agent objective ``f_i``.

    ``template`` holds the domain constraints over the lifted vector
    ``v = (x, inner)``; the first ``n`` variables are the decision ``x``.
    ``f(x) = min { obj @ v : v feasible, v[:n] = x }``.
    """

    agent_id: int
    n: int
    template: ConicProgram
    obj: np.ndarray
    analytic_oracle: Callable[[np.ndarray], tuple[np.ndarray, float]] | None = None
    value_fn: Callable[[np.ndarray], float] | None = None
    domain_fn: Callable[[np.ndarray, float], bool] | None = None
    tol: float = 1e-8
    kind: str = "generic"
    _eval_prog: list = field(default_factory=list, repr=False)

    def _response(self, v: np.ndarray, y: np.ndarray) -> OracleResponse:
        x = v[: self.n].copy()
        f = self.value_fn(x) if self.value_fn is not None else float(self.obj @ v)
        return OracleResponse(x, f, f - float(y @ x))

    def lagrangian_objective(self, y: np.ndarray) -> np.ndarray:
        c = self.obj.copy()
        c[: self.n] -= y
        return c

    def evaluate(self, x: np.ndarray) -> float:
        """f(x), or +inf when x is outside the domain."""
        if self.value_fn is not None:
            if self.domain_fn is not None and not self.domain_fn(x, 1e-7):
                return np.inf
            return self.value_fn(x)
        if not self._eval_prog:
            E = sp.csr_matrix((np.ones(self.n), (np.arange(self.n), np.arange(self.n))),
                              shape=(self.n, self.template.n))
            self._eval_prog.append(E)
        E = self._eval_prog[0]
        prog = self.template.with_blocks([Block("eq", E, -np.asarray(x, dtype=float))]).with_objective(self.obj)
        out = solve(prog, self.tol)
        if out.status == INFEASIBLE:
            return np.inf
        if out.status != OPTIMAL:
            raise SolverError(f"agent {self.agent_id}: evaluation failed ({out.status})", out)
        return float(self.obj @ out.point)

    def in_domain(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        if self.domain_fn is not None:
            return self.domain_fn(x, tol)
        return bool(np.isfinite(self.evaluate(x)))


def conjugate_oracle(agent: AgentModel, y: np.ndarray, solver_oracle: bool = False) -> OracleResponse:
    """A minimizer of ``f(z) - y'z`` over dom f; its Lagrangian value is ``-f*(y)``.

    The closed form is used when the agent has one, unless ``solver_oracle``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (agent.n,):
        raise ValueError(f"price of length {y.shape[0]} for agent of size {agent.n}")
    if agent.analytic_oracle is not None and not solver_oracle:
        x, f = agent.analytic_oracle(y)
        return OracleResponse(x, f, f - float(y @ x))
    out = solve(agent.template.with_objective(agent.lagrangian_objective(y)), agent.tol)
    if out.status != OPTIMAL:
        raise SolverError(f"agent {agent.agent_id}: conjugate oracle {out.status}", out)
    return agent._response(out.point, y)


@dataclass(eq=False)
class ResponseBundle:
    """Candidate responses ``Z`` (columns) of one agent."""

    Z: np.ndarray
    f_values: np.ndarray
    lagrangian_values: np.ndarray
    tags: list[str]
    iterations: np.ndarray
    y: np.ndarray
    conj_value: float  # f*(y) at the generating price

    @property
    def width(self) -> int:
        return self.Z.shape[1]

    @classmethod
    def from_responses(cls, rs: Sequence[OracleResponse], tags, iteration, y, conj_value):
        return cls(
            Z=np.column_stack([r.x for r in rs]),
            f_values=np.array([r.f_value for r in rs]),
            lagrangian_values=np.array([r.lagrangian_value for r in rs]),
            tags=list(tags),
            iterations=np.full(len(rs), iteration, dtype=int),
            y=np.asarray(y, dtype=float),
            conj_value=float(conj_value),
        )

    def concat(self, other: ResponseBundle) -> ResponseBundle:
        return ResponseBundle(
            np.hstack([self.Z, other.Z]),
            np.r_[self.f_values, other.f_values],
            np.r_[self.lagrangian_values, other.lagrangian_values],
            self.tags + other.tags,
            np.r_[self.iterations, other.iterations],
            self.y,
            self.conj_value,
        )


@dataclass(frozen=True)
class OracleConfig:
    """Multiple-response oracle parameters.

    ``family`` is ``value-subopt`` or ``price-perturbed``; ``mixing`` optionally
    splits ``N`` into ``(eps, count)`` sub-bundles of that family.
    """

    family: str = VALUE
    eps: float = 0.1
    N: int = 10
    mixing: tuple[tuple[float, int], ...] | None = None
    abs_floor: float = DEFAULT_ABS_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.family not in _ORACLE_CODE:
            raise ValueError(f"unknown oracle family {self.family!r}")
        if self.eps < 0 or self.N < 1:
            raise ValueError("need eps >= 0 and N >= 1")
        if self.mixing is not None:
            mix = tuple((float(e), int(c)) for e, c in self.mixing)
            if any(e < 0 or c < 1 for e, c in mix) or sum(c for _, c in mix) != self.N:
                raise ValueError("mixing counts must be positive and sum to N")
            object.__setattr__(self, "mixing", mix)

    def parts(self) -> tuple[tuple[float, int], ...]:
        return self.mixing if self.mixing is not None else ((self.eps, self.N),)


def _rng(cfg: OracleConfig, agent_id: int, iteration: int, code: int, part: int) -> np.random.Generator:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(agent_id, iteration, code, part))
    return np.random.Generator(np.random.Philox(ss))


def _tag(family: str, eps: float) -> str:
    return f"{family}({eps:g})"


def _value_columns(agent, y, exact, eps, count, cfg, rng) -> list[tuple[OracleResponse, str]]:
    bound = exact.lagrangian_value + eps * max(abs(exact.lagrangian_value), cfg.abs_floor)
    row = Block("le", sp.csr_matrix(agent.lagrangian_objective(y)[None, :]), np.array([-bound]))
    prog = agent.template.with_blocks([row])
    cols = []
    deltas = rng.standard_normal((count, agent.n))
    for delta in deltas:
        c = np.zeros(agent.template.n)
        c[: agent.n] = -delta
        out = solve(prog.with_objective(c), agent.tol)
        if out.status != OPTIMAL:
            warnings.warn(f"agent {agent.agent_id}: value-subopt column {out.status}; reusing exact response")
            cols.append((exact, EXACT))
            continue
        cols.append((agent._response(out.point, y), _tag(VALUE, eps)))
    return cols


def _price_columns(agent, y, exact, eps, count, cfg, rng) -> list[tuple[OracleResponse, str]]:
    cols = []
    radius = eps * np.abs(y)
    deltas = rng.uniform(-1.0, 1.0, (count, agent.n)) * radius
    for delta in deltas:
        try:
            r = conjugate_oracle(agent, y + delta)
        except SolverError as err:
            warnings.warn(f"{err}; reusing exact response")
            cols.append((exact, EXACT))
            continue
        cols.append((OracleResponse(r.x, r.f_value, r.f_value - float(y @ r.x)), _tag(PRICE, eps)))
    return cols


def _bundle(agent, y, cfg: OracleConfig, parts, iteration, exact=None) -> ResponseBundle:
    y = np.asarray(y, dtype=float)
    if exact is None:
        exact = conjugate_oracle(agent, y)
    gen = _value_columns if cfg.family == VALUE else _price_columns
    cols = [(exact, EXACT)]
    for k, (eps, count) in enumerate(parts):
        need = count - 1 if k == 0 else count
        if need > 0:
            rng = _rng(cfg, agent.agent_id, iteration, _ORACLE_CODE[cfg.family], k)
            cols += gen(agent, y, exact, eps, need, cfg, rng)
    return ResponseBundle.from_responses([c[0] for c in cols], [c[1] for c in cols], iteration, y,
                                         -exact.lagrangian_value)


def value_suboptimal_bundle(agent: AgentModel, y, cfg: OracleConfig, iteration: int = 0) -> ResponseBundle:
    """Exact response plus ``N-1`` maximizers of random linear objectives over the
    eps-suboptimal Lagrangian sublevel set."""
    return _bundle(agent, y, _as_family(cfg, VALUE), ((cfg.eps, cfg.N),), iteration)


def price_perturbed_bundle(agent: AgentModel, y, cfg: OracleConfig, iteration: int = 0) -> ResponseBundle:
    """Exact response plus ``N-1`` exact responses at prices perturbed in ``[-eps|y|, eps|y|]``."""
    return _bundle(agent, y, _as_family(cfg, PRICE), ((cfg.eps, cfg.N),), iteration)


def _as_family(cfg: OracleConfig, family: str) -> OracleConfig:
    if cfg.family == family:
        return cfg
    return OracleConfig(family, cfg.eps, cfg.N, None, cfg.abs_floor, cfg.seed)


def compose_bundle(agent: AgentModel, y, cfg: OracleConfig, history: Sequence[ResponseBundle] = (),
                   iteration: int = 0, max_history: int | None = None,
                   exact: OracleResponse | None = None) -> ResponseBundle:
    """Fresh bundle (split per ``cfg.mixing``) followed by the columns of prior bundles."""
    if max_history is not None and len(history) > max_history:
        raise ValueError(f"history of {len(history)} bundles exceeds window {max_history}")
    fresh = _bundle(agent, y, cfg, cfg.parts(), iteration, exact)
    for old in history:
        fresh = fresh.concat(old)
    return fresh


class AgentPool:
    """Fan-out of per-agent oracle queries; results are ordered by agent index."""

    def __init__(self, agents: Sequence[AgentModel], workers: int = 1):
        self.agents = list(agents)
        self.workers = workers

    def map(self, fn: Callable, *args_per_agent):
        jobs = list(zip(self.agents, *args_per_agent))
        if self.workers <= 1:
            return [fn(*job) for job in jobs]
        with ThreadPoolExecutor(self.workers) as ex:
            return list(ex.map(lambda job: fn(*job), jobs))

    def exact(self, ys: Sequence[np.ndarray]) -> list[OracleResponse]:
        return self.map(conjugate_oracle, ys)

    def bundles(self, ys, cfg: OracleConfig, histories, iteration: int, exact=None) -> list[ResponseBundle]:
        exact = exact if exact is not None else [None] * len(self.agents)
        return self.map(lambda a, y, h, e: compose_bundle(a, y, cfg, h, iteration, exact=e), ys, histories, exact)
