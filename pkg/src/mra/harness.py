"""Experiment driver: price discovery, bundle generation, recovery and metrics per iteration."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp

from . import pricing
from .agents import PRICE, VALUE, AgentPool, OracleConfig
from .benchmarks import InstanceBundle, generate, load_instance
from .conic import OPTIMAL, ConicProgram, Block, SolverError, solve
from .core import (BlockAffineCoupling, BlockPrimalPoint, DualPoint, dual_value, local_prices,
                   relative_suboptimality, residuals_from_violation)
from .recovery import CONVEX, INTEGRAL_EXACT, INTEGRAL_HEURISTIC, RP_ONLY, RP_PLUS_RC, RecoveryConfig, recover

log = logging.getLogger(__name__)

POINTS = ("raw", "mra", "avg", "proj", "dualavg")
METHODS = ("accpm", "subgradient")


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

@dataclass
class OracleSection:
    family: str = VALUE
    eps: float = 0.1
    N: int = 10
    mixing: list | None = None
    history: int = 1
    abs_floor: float = 1e-9


@dataclass
class RecoverySection:
    objective_mode: str = RP_PLUS_RC
    selection_mode: str = CONVEX
    samples: int = 16
    cadence: int = 1


@dataclass
class ExperimentConfig:
    instance: dict = field(default_factory=lambda: {"family": "ra", "seed": 0, "params": {}})
    method: str = "accpm"
    step_rule: str = "1/sqrt(k)"
    sweep_steps: bool = False
    oracle: OracleSection = field(default_factory=OracleSection)
    recovery: RecoverySection = field(default_factory=RecoverySection)
    max_iterations: int = 50
    feasibility_threshold: float = 1e-6
    absolute_feasibility_threshold: float = 1e-6
    track_projection: bool = True
    track_dual_average: bool = True
    accpm_tol: float = 1e-6
    stall_patience: int = 50
    stall_tol: float = 1e-9
    workers: int = 1
    seed: int = 0
    output: dict = field(default_factory=lambda: {"csv": "run.csv", "dir": "."})

    def __post_init__(self):
        if isinstance(self.oracle, dict):
            self.oracle = _section(OracleSection, self.oracle, "oracle")
        if isinstance(self.recovery, dict):
            self.recovery = _section(RecoverySection, self.recovery, "recovery")
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.step_rule not in pricing.STEP_RULES:
            raise ConfigError(f"step_rule must be one of {sorted(pricing.STEP_RULES)}")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.oracle.family not in (VALUE, PRICE):
            raise ConfigError(f"oracle family must be {VALUE!r} or {PRICE!r}")
        if self.oracle.history < 1 or self.recovery.cadence < 1 or self.workers < 1:
            raise ConfigError("history, cadence and workers must be >= 1")
        inst = self.instance
        if not isinstance(inst, dict) or ("file" in inst) == ("family" in inst):
            raise ConfigError("instance needs exactly one of 'file' or 'family'")
        try:
            self.oracle_config()
            self.recovery_config()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def oracle_config(self) -> OracleConfig:
        o = self.oracle
        mix = None if o.mixing is None else tuple(tuple(p) for p in o.mixing)
        return OracleConfig(o.family, o.eps, o.N, mix, o.abs_floor, self.seed)

    def recovery_config(self) -> RecoveryConfig:
        r = self.recovery
        return RecoveryConfig(r.objective_mode, r.selection_mode, r.samples, self.oracle.history, self.seed)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def replace(self, **kw) -> ExperimentConfig:
        d = self.to_dict()
        for k, v in kw.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict) and k in ("oracle", "recovery"):
                d[k] = {**d[k], **v}
            else:
                d[k] = v
        return ExperimentConfig.from_dict(d)


def _section(kind, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be an object")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    return kind(**d)


def load_instance_spec(spec: dict, base: Path | None = None) -> InstanceBundle:
    if "file" in spec:
        p = Path(spec["file"])
        if base is not None and not p.is_absolute():
            p = base / p
        return load_instance(p)
    return generate(spec["family"], spec.get("seed", 0), **spec.get("params", {}))


# -- records -----------------------------------------------------------------------

@dataclass(frozen=True)
class PointMetrics:
    f: float
    subopt: float
    rp: float
    rc: float
    relinf: float
    domfeas: float  # 1.0 / 0.0, nan when the point is not tracked

    @classmethod
    def missing(cls) -> PointMetrics:
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan)

    def feasible(self, threshold: float) -> bool:
        return self.relinf < threshold and self.domfeas == 1.0


@dataclass(frozen=True)
class IterationRecord:
    k: int
    g_lambda: float
    points: dict[str, PointMetrics]


@dataclass
class RunResult:
    records: list[IterationRecord]
    stop_reason: str
    lam: np.ndarray | None
    f_star: float
    threshold: float
    rule: str | None = None
    sweep: dict[str, Any] | None = None


@dataclass
class IterationContext:
    """Everything a hook may inspect after one iteration."""

    k: int
    lam: np.ndarray
    ys: list[np.ndarray]
    raw: BlockPrimalPoint
    bundles: list | None
    recovery: Any
    record: IterationRecord


# -- baselines ----------------------------------------------------------------------

def primal_average(history: list[BlockPrimalPoint], k: int | None = None) -> BlockPrimalPoint:
    """Arithmetic mean of the first ``k`` raw points."""
    k = len(history) if k is None else k
    if k < 1 or k > len(history):
        raise ValueError("need 1 <= k <= len(history)")
    blocks = tuple(sum(h.blocks[i] for h in history[:k]) / k for i in range(len(history[0].blocks)))
    return BlockPrimalPoint(blocks)


def project_feasible(coupling: BlockAffineCoupling, x: BlockPrimalPoint | list, tol: float = 1e-10
                     ) -> BlockPrimalPoint:
    """Euclidean projection onto ``{z : Az <= b}``.

    Solved in the dual: ``mu = argmin 1/2 mu'AA'mu - mu'(Ax - b)`` over
    ``mu >= 0``, then ``z = x - A'mu``.
    """
    blocks = x.blocks if isinstance(x, BlockPrimalPoint) else tuple(x)
    r = coupling.Ax(blocks) - coupling.b
    if np.all(r <= 0):
        return BlockPrimalPoint(tuple(np.array(b, dtype=float) for b in blocks))
    A = coupling.dense()
    m = coupling.m
    P = sp.csc_matrix(A @ A.T)
    prog = ConicProgram(m, -r, (Block("le", -sp.eye(m, format="csr"), np.zeros(m)),), P=P)
    out = solve(prog, tol)
    if out.status != OPTIMAL:
        raise SolverError(f"projection: {out.status}", out)
    mu = np.maximum(out.point, 0.0)
    z = np.concatenate([np.asarray(b, dtype=float) for b in blocks]) - A.T @ mu
    return BlockPrimalPoint.from_flat(z, coupling.block_dims)


# -- metrics -----------------------------------------------------------------------

def _point_metrics(inst: InstanceBundle, blocks, lam, f_star, f_values=None, in_domain=None) -> PointMetrics:
    cp = inst.coupling
    blocks = tuple(blocks)
    if f_values is None:
        f_values = [ag.evaluate(x) for ag, x in zip(inst.agents, blocks)]
    f = float(sum(f_values))
    if in_domain is None:
        in_domain = all(ag.in_domain(x) if ag.domain_fn is not None else math.isfinite(fv)
                        for ag, x, fv in zip(inst.agents, blocks, f_values))
    res = residuals_from_violation(cp.Ax(blocks) - cp.b, lam)
    nb = float(np.linalg.norm(cp.b))
    relinf = res.r_p / nb if nb > 0 else res.r_p
    sub = relative_suboptimality(f, f_star) if math.isfinite(f) else float("inf")
    return PointMetrics(f, sub, res.r_p, res.r_c, relinf, 1.0 if in_domain else 0.0)


def feasibility_threshold(cfg: ExperimentConfig, coupling: BlockAffineCoupling) -> float:
    """Relative threshold, or the absolute one when ``||b|| = 0``."""
    return cfg.feasibility_threshold if np.linalg.norm(coupling.b) > 0 else cfg.absolute_feasibility_threshold


def price_box_for(inst: InstanceBundle) -> pricing.PriceBox:
    lam = inst.ensure_reference().lambda_star
    p_min, p_max = float(lam.min()), float(lam.max())
    if p_max <= 0.0:
        p_max = 1.0
    return pricing.make_price_box(p_min, p_max, inst.coupling.m)


# -- main loop -----------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, inst: InstanceBundle | None = None,
                   hook: Callable[[IterationContext], None] | None = None,
                   on_record: Callable[[IterationRecord], None] | None = None,
                   stop_at_feasible: str | None = None) -> RunResult:
    """Run one (method, oracle, recovery) combination for up to ``max_iterations``.

    ``stop_at_feasible`` names a tracked point; the run ends the first time
    that point is feasible.
    """
    if cfg.sweep_steps:
        return sweep_steps(cfg, inst, hook)
    if inst is None:
        inst = load_instance_spec(cfg.instance)
    cp = inst.coupling
    ref = inst.ensure_reference()
    f_star = ref.f_star
    threshold = feasibility_threshold(cfg, cp)
    box = price_box_for(inst)
    pool = AgentPool(inst.agents, cfg.workers)
    ocfg = cfg.oracle_config()
    rcfg = cfg.recovery_config()
    H = cfg.oracle.history
    histories = [deque(maxlen=H - 1) for _ in inst.agents] if H > 1 else None

    records: list[IterationRecord] = []
    raw_sum = None
    stop = "max-iterations"
    lam_out = None
    if cfg.max_iterations == 0:
        return RunResult(records, "zero-iterations", None, f_star, threshold, cfg.step_rule)

    if cfg.method == "accpm":
        state = pricing.AccpmState.initial(box)
        lam = state.lam()
    else:
        sstate = pricing.SubgradState(0.5 * (box.lower + box.upper), cfg.step_rule)
        lam = sstate.lam

    def exact_at(lam_vec):
        ys = local_prices(cp, DualPoint(lam_vec))
        rs = pool.exact(ys)
        return ys, rs, BlockPrimalPoint(tuple(r.x for r in rs), tuple(r.f_value for r in rs))

    for k in range(1, cfg.max_iterations + 1):
        lam = np.maximum(lam, 0.0)
        dual = DualPoint(lam)
        ys, exact, raw = exact_at(lam)
        g = dual_value(cp, dual, raw)

        # bundles and recovery
        bundles = rec = None
        if (k - 1) % cfg.recovery.cadence == 0:
            hist = [list(h) for h in histories] if histories is not None else [()] * cp.K
            fresh = pool.bundles(ys, ocfg, [()] * cp.K, k, exact=exact)
            bundles = fresh
            if histories is not None:
                bundles = [b if not h else _concat(b, h) for b, h in zip(fresh, hist)]
                for h, b in zip(histories, fresh):
                    h.appendleft(b)
            rec = recover(bundles, cp, dual, rcfg)

        raw_sum = [np.array(x, dtype=float) for x in raw.blocks] if raw_sum is None else \
            [s + x for s, x in zip(raw_sum, raw.blocks)]
        pts = {"raw": _point_metrics(inst, raw.blocks, lam, f_star, raw.f_values, in_domain=True)}
        pts["mra"] = _point_metrics(inst, rec.x_bar.blocks, lam, f_star) if rec is not None else PointMetrics.missing()
        pts["avg"] = _point_metrics(inst, [s / k for s in raw_sum], lam, f_star)
        if cfg.track_projection:
            pts["proj"] = _point_metrics(inst, project_feasible(cp, raw).blocks, lam, f_star)
        else:
            pts["proj"] = PointMetrics.missing()
        pts["dualavg"] = PointMetrics.missing()

        # price update
        lam_next = None
        try:
            if cfg.method == "accpm":
                cut = pricing.generate_cut(cp, raw, dual, source=k)
                state.add_cut(cut, lam)
                pricing.warm_start(state)
                pricing.accpm_center(state)
                lam_next = state.lam()
                if cfg.track_dual_average:
                    lam_avg, _ = pricing.averaged_dual(state.queried, state.z)
                    _, _, xa = exact_at(lam_avg)
                    pts["dualavg"] = _point_metrics(inst, xa.blocks, lam, f_star, xa.f_values, in_domain=True)
            else:
                q = cp.b - cp.Ax(raw)
                sstate = pricing.subgradient_step(sstate, g, q, box, patience=cfg.stall_patience,
                                                  tol=cfg.stall_tol)
                lam_next = sstate.lam
        except pricing.ZeroCut:
            stop = "zero-subgradient"
        except pricing.LocalizationCollapsed:
            stop = "localization-collapsed"

        record = IterationRecord(k, g, pts)
        records.append(record)
        if on_record is not None:
            on_record(record)
        if hook is not None:
            hook(IterationContext(k, lam, ys, raw, bundles, rec, record))
        lam_out = lam
        if lam_next is None:
            break
        if stop_at_feasible is not None and pts[stop_at_feasible].feasible(threshold):
            stop = "feasible"
            break
        if cfg.method == "accpm":
            if cfg.accpm_tol > 0 and np.linalg.norm(lam_next - lam) <= cfg.accpm_tol:
                stop = "price-converged"
                break
        elif sstate.stopped:
            stop = "g-best-stalled"
            break
        lam = lam_next
    return RunResult(records, stop, lam_out, f_star, threshold, cfg.step_rule if cfg.method == "subgradient" else None)


def _concat(fresh, older):
    out = fresh
    for b in older:
        out = out.concat(b)
    return out


def sweep_steps(cfg: ExperimentConfig, inst: InstanceBundle | None = None, hook=None) -> RunResult:
    """Run every step rule and keep the one with the smallest final MRA primal residual."""
    if inst is None:
        inst = load_instance_spec(cfg.instance)
    results = {}
    for rule in pricing.STEP_RULES:
        sub = cfg.replace(step_rule=rule, sweep_steps=False, method="subgradient")
        results[rule] = run_experiment(sub, inst, hook)

    def final_rp(res: RunResult) -> float:
        if not res.records:
            return float("inf")
        p = res.records[-1].points
        v = p["mra"].rp
        return v if math.isfinite(v) else p["raw"].rp
    best = min(results, key=lambda r: final_rp(results[r]))
    out = results[best]
    out.rule = best
    out.sweep = {rule: {"final_rp": final_rp(res), "result": res} for rule, res in results.items()}
    return out


def first_feasible(records: list[IterationRecord], point: str, threshold: float) -> int | None:
    for r in records:
        if r.points[point].feasible(threshold):
            return r.k
    return None


def best_to_date(records: list[IterationRecord], point: str, threshold: float) -> list[float]:
    """Best suboptimality among feasible iterates so far (nan before the first)."""
    best = float("nan")
    out = []
    for r in records:
        p = r.points[point]
        if p.feasible(threshold) and math.isfinite(p.subopt):
            best = p.subopt if math.isnan(best) else min(best, p.subopt)
        out.append(best)
    return out
