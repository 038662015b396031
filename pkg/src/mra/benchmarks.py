"""Seeded generators for the four benchmark families and the centralized reference solve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import core
from .agents import AgentModel
from .conic import OPTIMAL, Affine, Block, Builder, ConicProgram, SolverError, geomean_epigraph, solve
from .core import EQ_LOWER, EQ_UPPER, INEQ, BlockAffineCoupling


@dataclass(eq=False)
class Reference:
    f_star: float
    x_star: list[np.ndarray]
    lambda_star: np.ndarray


@dataclass(eq=False)
class InstanceBundle:
    coupling: BlockAffineCoupling
    agents: list[AgentModel]
    generator: str
    params: dict[str, Any]
    seed: int
    reference: Reference | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def primal_dim(self) -> int:
        return self.coupling.n

    @property
    def dual_dim(self) -> int:
        return self.coupling.m

    def ensure_reference(self) -> Reference:
        if self.reference is None:
            self.reference = reference_solve(self)
        return self.reference

    def to_dict(self) -> dict[str, Any]:
        d = core.coupling_to_dict(self.coupling)
        d.update(generator=self.generator, params=dict(self.params), seed=self.seed)
        if self.reference is not None:
            d["reference"] = {
                "f_star": self.reference.f_star,
                "x_star": [x.tolist() for x in self.reference.x_star],
                "lambda_star": self.reference.lambda_star.tolist(),
            }
        return d

    def save(self, path: str | Path) -> None:
        core.dump_json(self.to_dict(), path)


def load_instance(path: str | Path) -> InstanceBundle:
    """Rebuild an instance from its JSON; agents are regenerated from (generator, params, seed)."""
    d = core.load_json(path)
    return instance_from_dict(d)


def instance_from_dict(d: dict[str, Any]) -> InstanceBundle:
    inst = generate(d["generator"], seed=d["seed"], **d["params"])
    stored = core.coupling_from_dict(d)
    same = stored.block_dims == inst.coupling.block_dims and np.array_equal(stored.b, inst.coupling.b) and all(
        np.array_equal(B1, B2) for B1, B2 in zip(stored.blocks, inst.coupling.blocks))
    if not same:
        raise ValueError("stored coupling does not match the regenerated instance")
    ref = d.get("reference")
    if ref is not None:
        inst.reference = Reference(float(ref["f_star"]), [np.asarray(x, dtype=float) for x in ref["x_star"]],
                                   np.asarray(ref["lambda_star"], dtype=float))
    return inst


# -- resource allocation -------------------------------------------------------

def _geomean(u: np.ndarray) -> float:
    u = np.maximum(u, 0.0)
    if np.any(u == 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(u))))


def _ra_agent(i: int, C: np.ndarray) -> AgentModel:
    p, m = C.shape
    bld = Builder()
    x = bld.var(m, "x")
    s = bld.var(1, "s")[0]
    bld.le_matrix(-sp.eye(m), x, 0.0)
    bld.le_matrix(np.ones((1, m)), x, 1.0)
    geomean_epigraph(bld, [Affine.dot(x, C[j]) for j in range(p)], Affine.of(s))
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[s] = -1.0

    def value_fn(z):
        return -_geomean(C @ np.maximum(z, 0.0))

    def domain_fn(z, tol):
        return bool(np.all(z >= -tol) and z.sum() <= 1 + tol)

    return AgentModel(i, m, prog, obj, value_fn=value_fn, domain_fn=domain_fn, kind="geomean")


def gen_resource_allocation(seed: int, K: int = 100, m: int = 50, p: int = 5,
                            budget_n: int | None = None) -> InstanceBundle:
    """Agents ``-geomean(C_i x_i)`` on ``{x >= 0, 1'x <= 1}`` sharing budgets ``sum x_i <= R``.

    Entries of column k of C_i are uniform on ``[(k-1)/m, k/m]`` so higher-index
    resources are more efficient; budgets ``R[m-j] ~ sqrt(n) + (n/2 - sqrt(n)) U[(j-1)/m, j/m]``
    make those also scarcer. ``n = budget_n`` defaults to ``K``: with ``n = K*m``
    the budgets exceed total demand and almost no constraint binds.
    """
    if min(K, m, p) < 1:
        raise ValueError("K, m, p must be positive")
    rng = np.random.default_rng(seed)
    n = K if budget_n is None else budget_n
    lo = np.arange(m) / m
    Cs = [lo + rng.uniform(size=(p, m)) / m for _ in range(K)]
    R = np.empty(m)
    for j in range(1, m + 1):
        R[m - j] = math.sqrt(n) + (n / 2 - math.sqrt(n)) * rng.uniform((j - 1) / m, j / m)
    agents = [_ra_agent(i, C) for i, C in enumerate(Cs)]
    coupling = BlockAffineCoupling(tuple(np.eye(m) for _ in range(K)), R)
    params = {"K": K, "m": m, "p": p}
    if budget_n is not None:
        params["budget_n"] = budget_n
    return InstanceBundle(coupling, agents, "ra", params, seed)


# -- assignment (convex relaxation) ---------------------------------------------

def _project_agent(i: int, r: np.ndarray, q: float) -> AgentModel:
    m = r.size
    bld = Builder()
    x = bld.var(m, "x")
    xt = bld.var(m, "xt")
    eye = sp.eye(m)
    bld.le_matrix(sp.hstack([-eye, q * eye]), np.r_[x, xt], 0.0)
    bld.le_matrix(np.ones((1, m)), xt, 1.0)
    bld.le_matrix(-eye, xt, 0.0)
    bld.le_matrix(eye, xt, 1.0)
    bld.le_matrix(-eye, x, 0.0)
    bld.le_matrix(eye, x, q)
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[xt] = -r

    def value_fn(z):
        # fractional knapsack: fill by reward with caps min(z/q, 1), total <= 1
        caps = np.clip(np.asarray(z) / q, 0.0, 1.0)
        val, room = 0.0, 1.0
        for j in np.argsort(-r, kind="stable"):
            take = min(caps[j], room)
            val -= r[j] * take
            room -= take
            if room <= 0:
                break
        return float(val)

    def domain_fn(z, tol):
        return bool(np.all(z >= -tol) and np.all(z <= q + tol))

    def oracle(y):
        gain = q * (-y) - r  # per-unit cost of assigning to team j, y = -lambda
        j = int(np.argmin(gain))
        z = np.zeros(m)
        if gain[j] < 0:
            z[j] = q
            return z, float(-r[j])
        return z, 0.0

    return AgentModel(i, m, prog, obj, analytic_oracle=oracle, value_fn=value_fn, domain_fn=domain_fn,
                      kind="project")


def _team_agent(i: int, a: float, d: float) -> AgentModel:
    bld = Builder()
    c, ct, e, t = (bld.var(1, nm)[0] for nm in ("c", "ct", "e", "t"))
    C, CT, E, T = (Affine.of(v) for v in (c, ct, e, t))
    bld.le(-C, -CT, C - CT, -E, CT - d - E)
    bld.rsoc(T, Affine({}, 1.0 / a), [E])
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[t] = 1.0

    def value_fn(z):
        return float(a * max(z[0] - d, 0.0) ** 2)

    def domain_fn(z, tol):
        return bool(z[0] >= -tol)

    def oracle(y):
        if y[0] <= 0:
            return np.zeros(1), 0.0
        cc = d + y[0] / (2 * a)
        return np.array([cc]), a * (cc - d) ** 2

    return AgentModel(i, 1, prog, obj, analytic_oracle=oracle, value_fn=value_fn, domain_fn=domain_fn, kind="team")


def gen_assignment(seed: int, n: int = 200, m: int = 50) -> InstanceBundle:
    """Convex relaxation of project-to-team assignment; ``n`` project agents then ``m`` team agents."""
    if min(n, m) < 1:
        raise ValueError("n, m must be positive")
    rng = np.random.default_rng(seed)
    Rw = rng.uniform(size=(n, m))
    q = rng.integers(1, math.ceil(n / (2 * m)) + 1, size=n).astype(float)
    w = Rw.sum() / (30 * q.sum())
    a = rng.uniform(0.8 * w, 1.25 * w, size=m)
    d = rng.integers(1, math.ceil(q.sum() / n) + 1, size=m).astype(float)
    agents = [_project_agent(i, Rw[i], q[i]) for i in range(n)]
    agents += [_team_agent(n + j, a[j], d[j]) for j in range(m)]
    blocks = [np.eye(m) for _ in range(n)]
    for j in range(m):
        col = np.zeros((m, 1))
        col[j, 0] = -1.0
        blocks.append(col)
    coupling = BlockAffineCoupling(tuple(blocks), np.zeros(m))
    inst = InstanceBundle(coupling, agents, "assign", {"n": n, "m": m}, seed)
    inst.meta.update(rewards=Rw, q=q, a=a, d=d)
    return inst


# -- multi-commodity flow --------------------------------------------------------

def _random_graph(rng, nodes: int, edges: int) -> list[tuple[int, int]]:
    perm = rng.permutation(nodes)
    E = [(int(perm[k]), int(perm[(k + 1) % nodes])) for k in range(nodes)]
    if edges < len(E):
        raise ValueError("edge count must cover the Hamiltonian cycle")
    if edges > nodes * (nodes - 1):
        raise ValueError("too many edges for a simple digraph")
    seen = set(E)
    while len(E) < edges:
        u, v = (int(t) for t in rng.integers(0, nodes, size=2))
        if u != v and (u, v) not in seen:
            seen.add((u, v))
            E.append((u, v))
    return E


def incidence(nodes: int, E: list[tuple[int, int]]) -> np.ndarray:
    """+1 where an edge enters a node, -1 where it leaves."""
    A = np.zeros((nodes, len(E)))
    for k, (u, v) in enumerate(E):
        A[u, k] = -1.0
        A[v, k] = 1.0
    return A


def _mcf_agent(i: int, Ainc: np.ndarray, src: int, dst: int, b: float, R: float) -> AgentModel:
    p, q = Ainc.shape
    bld = Builder()
    x = bld.var(q, "x")
    z = bld.var(q, "z")
    dd = bld.var(1, "d")[0]
    s = bld.var(1, "s")[0]
    eye = sp.eye(q)
    bld.le_matrix(-eye, z, 0.0)
    bld.le_matrix(sp.hstack([-eye, eye]), np.r_[x, z], 0.0)
    bld.le_matrix(eye, x, R)
    ed = np.zeros((p, 1))
    ed[src, 0], ed[dst, 0] = 1.0, -1.0
    bld.eq_matrix(sp.hstack([sp.csr_matrix(Ainc), sp.csr_matrix(ed)]), np.r_[z, dd], 0.0)
    bld.rsoc(Affine.of(dd), Affine({}, 1.0), [Affine.of(s)])
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[s] = -b
    A_eq = np.hstack([Ainc, ed])
    c_lp = np.r_[np.zeros(q), -1.0]

    def value_fn(xv):
        # f(x) = -b sqrt(max flow with edge capacities x); presolve misjudges tiny capacities
        ub = np.maximum(xv, 0.0)
        out = linprog(c_lp, A_eq=A_eq, b_eq=np.zeros(p), bounds=[(0.0, u) for u in ub] + [(0.0, None)],
                      method="highs", options={"presolve": False})
        if out.status != 0:
            raise SolverError(f"agent {i}: max-flow LP failed ({out.message})")
        return -b * math.sqrt(max(-out.fun, 0.0))

    def domain_fn(xv, tol):
        return bool(np.all(xv >= -tol) and np.all(xv <= R + tol))

    return AgentModel(i, q, prog, obj, value_fn=value_fn, domain_fn=domain_fn, kind="commodity")


def gen_mcf(seed: int, K: int = 100, nodes: int = 15, edges: int = 100) -> InstanceBundle:
    """Commodities maximizing ``b_i sqrt(d_i)`` over a strongly connected random digraph."""
    rng = np.random.default_rng(seed)
    E = _random_graph(rng, nodes, edges)
    Ainc = incidence(nodes, E)
    pairs = []
    for _ in range(K):
        r, s = rng.choice(nodes, size=2, replace=False)
        pairs.append((int(r), int(s)))
    cap = rng.uniform(0.2, 2.0, size=edges) * math.exp(0.5)
    b = rng.uniform(0.5, 1.5, size=K)
    v = np.exp(rng.standard_normal(K))
    R = float(cap.max())
    agents = [_mcf_agent(i, Ainc, r, s, b[i], R) for i, (r, s) in enumerate(pairs)]
    coupling = BlockAffineCoupling(tuple(v[i] * np.eye(edges) for i in range(K)), cap)
    inst = InstanceBundle(coupling, agents, "mcf", {"K": K, "nodes": nodes, "edges": edges}, seed)
    inst.meta.update(edges=E, pairs=pairs, volumes=v, weights=b, R=R)
    return inst


# -- shipment (capacitated optimal transport) ------------------------------------------

def _ship_agent(i: int, c: np.ndarray, supply: float) -> AgentModel:
    m = c.size
    bld = Builder()
    x = bld.var(m, "x")
    bld.le_matrix(-sp.eye(m), x, 0.0)
    bld.eq_matrix(np.ones((1, m)), x, supply)
    prog = bld.build()
    obj = np.zeros(prog.n)
    obj[x] = c

    def oracle(y):
        j = int(np.argmin(c - y))
        z = np.zeros(m)
        z[j] = supply
        return z, float(c[j] * supply)

    def value_fn(z):
        return float(c @ z)

    def domain_fn(z, tol):
        return bool(np.all(z >= -tol) and abs(z.sum() - supply) <= tol)

    return AgentModel(i, m, prog, obj, analytic_oracle=oracle, value_fn=value_fn, domain_fn=domain_fn,
                      kind="shipment")


def _transport_feasible(mu_s, mu_t, v, cap) -> bool:
    """Feasibility of the capacitated transport polytope (LP with a small slack margin)."""
    K, m = mu_s.size, mu_t.size
    bld = Builder()
    X = bld.var(K * m, "X")
    M = X.reshape(K, m)
    bld.le_matrix(-sp.eye(K * m), X, 0.0)
    bld.eq_matrix(sp.kron(sp.eye(K), np.ones((1, m))), X, mu_s)
    bld.eq_matrix(sp.kron(np.ones((1, K)), sp.eye(m)), X, mu_t)
    bld.le_matrix(sp.kron(v[None, :], sp.eye(m)), X, cap * (1 - 1e-6))
    del M
    return solve(bld.build()).status == OPTIMAL


def gen_shipment(seed: int, K: int = 100, m: int = 25, d: int = 10, sigma: float = 0.8) -> InstanceBundle:
    """Capacitated optimal transport with one agent per source row.

    Coupling rows: target marginals as equality pairs, then volume capacities.
    Volumes are redrawn (same stream) until the transport polytope is nonempty.
    """
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((K, d))
    T = rng.standard_normal((m, d))
    C = np.linalg.norm(S[:, None, :] - T[None, :, :], axis=2)
    mu_s = np.exp(rng.standard_normal(K))
    mu_s /= mu_s.sum()
    mu_t = np.exp(rng.standard_normal(m))
    mu_t /= mu_t.sum()
    cap = mu_t * math.exp(sigma ** 2 / 2)
    for redraws in range(1000):
        v = np.exp(sigma * rng.standard_normal(K))
        if _transport_feasible(mu_s, mu_t, v, cap):
            break
    else:
        raise RuntimeError("could not draw feasible volumes")
    agents = [_ship_agent(i, C[i], mu_s[i]) for i in range(K)]
    eye = np.eye(m)
    blocks = tuple(np.vstack([eye, -eye, v[i] * eye]) for i in range(K))
    b = np.r_[mu_t, -mu_t, cap]
    kinds = (EQ_UPPER,) * m + (EQ_LOWER,) * m + (INEQ,) * m
    coupling = BlockAffineCoupling(blocks, b, kinds)
    inst = InstanceBundle(coupling, agents, "ship", {"K": K, "m": m, "d": d, "sigma": sigma}, seed)
    inst.meta.update(cost=C, mu_s=mu_s, mu_t=mu_t, volumes=v, cap=cap, volume_redraws=redraws,
                     equality_multipliers=m, dual_dim_equalities=2 * m)
    return inst


GENERATORS = {
    "ra": gen_resource_allocation,
    "assign": gen_assignment,
    "mcf": gen_mcf,
    "ship": gen_shipment,
}


def generate(family: str, seed: int = 0, **params) -> InstanceBundle:
    try:
        gen = GENERATORS[family]
    except KeyError:
        raise ValueError(f"unknown benchmark family {family!r}") from None
    return gen(seed, **params)


# -- centralized solve -------------------------------------------------------------

def _shift(A: sp.spmatrix, offset: int, total: int) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    return sp.csr_matrix((A.data, A.indices + offset, A.indptr), shape=(A.shape[0], total))


def centralized_program(inst: InstanceBundle, margin: bool = False) -> tuple[ConicProgram, list[int]]:
    """All agent templates stacked block-diagonally plus the coupling rows (first ``m`` rows).

    With ``margin`` an extra variable ``t <= 1`` is added to every inequality
    coupling row (``Ax + t <= b``) and maximized.
    """
    offsets, total = [], 0
    for ag in inst.agents:
        offsets.append(total)
        total += ag.template.n
    nvar = total + (1 if margin else 0)
    cp = inst.coupling
    rows = []
    for ag, off, B in zip(inst.agents, offsets, cp.blocks):
        rows.append(_shift(sp.csr_matrix(B), off, nvar))
    Acoup = sum(rows[1:], rows[0])
    blocks = []
    if margin:
        ineq = np.array([k == INEQ for k in cp.row_kind], dtype=float)
        Acoup = Acoup + sp.csr_matrix((ineq, (np.arange(cp.m), np.full(cp.m, total))), shape=(cp.m, nvar))
    blocks.append(Block("le", sp.csr_matrix(Acoup), -cp.b))
    for ag, off in zip(inst.agents, offsets):
        for blk in ag.template.blocks:
            blocks.append(Block(blk.kind, _shift(blk.A, off, nvar), blk.b))
    c = np.zeros(nvar)
    if margin:
        c[total] = -1.0
        blocks.append(Block("le", sp.csr_matrix(([1.0], ([0], [total])), shape=(1, nvar)), np.array([-1.0])))
    else:
        for ag, off in zip(inst.agents, offsets):
            c[off:off + ag.template.n] = ag.obj
    return ConicProgram(nvar, c, tuple(blocks)), offsets


def reference_solve(inst: InstanceBundle, tol: float = 1e-9) -> Reference:
    """Centralized solve; coupling-row duals are returned as the optimal prices."""
    prog, offsets = centralized_program(inst)
    out = solve(prog, tol)
    if out.status != OPTIMAL:
        raise SolverError(f"reference solve: {out.status}", out)
    xs = [out.point[off:off + ag.n].copy() for ag, off in zip(inst.agents, offsets)]
    lam = np.maximum(out.duals[: inst.coupling.m], 0.0)
    f_star = float(sum(ag.obj @ out.point[off:off + ag.template.n] for ag, off in zip(inst.agents, offsets)))
    return Reference(f_star, xs, lam)


def slater_margin(inst: InstanceBundle) -> float:
    """Largest uniform slack (capped at 1) on the inequality coupling rows over agent domains."""
    prog, _ = centralized_program(inst, margin=True)
    out = solve(prog)
    if out.status != OPTIMAL:
        raise SolverError(f"margin problem: {out.status}", out)
    return float(-out.objective_value)
