"""Coupled-problem data model: block coupling, residuals, metrics, instance JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

INEQ = "inequality"
EQ_UPPER = "equality-pair-upper"
EQ_LOWER = "equality-pair-lower"
ROW_KINDS = (INEQ, EQ_UPPER, EQ_LOWER)

DEFAULT_TOL = 1e-9


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BlockAffineCoupling:
    """Coupling constraints ``sum_i A_i x_i <= b``.

    Equalities are stored as two opposing rows tagged with ``row_kind``;
    ``pair_of[r]`` gives the partner row of an equality-pair row, or -1.
    """

    blocks: tuple[np.ndarray, ...]
    b: np.ndarray
    row_kind: tuple[str, ...] = ()
    pair_of: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        blocks = tuple(np.atleast_2d(np.asarray(B, dtype=float)) for B in self.blocks)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if not blocks:
            raise DimensionError("coupling needs at least one block")
        m = b.shape[0]
        for i, B in enumerate(blocks):
            if B.shape[0] != m:
                raise DimensionError(f"block {i} has {B.shape[0]} rows, expected {m}")
            B.setflags(write=False)
        b.setflags(write=False)
        kinds = tuple(self.row_kind) or (INEQ,) * m
        if len(kinds) != m or any(k not in ROW_KINDS for k in kinds):
            raise DimensionError("row_kind must tag every row with a known kind")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "row_kind", kinds)
        object.__setattr__(self, "pair_of", _match_pairs(blocks, b, kinds))

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(B.shape[1] for B in self.blocks)

    @property
    def n(self) -> int:
        return sum(self.block_dims)

    def dense(self) -> np.ndarray:
        return np.hstack(self.blocks)

    def Ax(self, x: BlockPrimalPoint | Sequence[np.ndarray]) -> np.ndarray:
        xs = x.blocks if isinstance(x, BlockPrimalPoint) else x
        if len(xs) != self.K:
            raise DimensionError(f"expected {self.K} blocks, got {len(xs)}")
        out = np.zeros(self.m)
        for B, xi in zip(self.blocks, xs):
            xi = np.asarray(xi, dtype=float)
            if xi.shape != (B.shape[1],):
                raise DimensionError(f"block of shape {xi.shape}, expected ({B.shape[1]},)")
            out += B @ xi
        return out

    def equality_violation(self, x) -> np.ndarray:
        """|a^T x - beta| for each original equality, indexed by its upper row."""
        r = self.Ax(x) - self.b
        uppers = [i for i, k in enumerate(self.row_kind) if k == EQ_UPPER]
        return np.array([max(r[i], 0.0) + max(r[self.pair_of[i]], 0.0) for i in uppers])


def _match_pairs(blocks, b, kinds) -> tuple[int, ...]:
    m = b.shape[0]
    pair = [-1] * m
    A = np.hstack(blocks)
    lowers = [j for j, k in enumerate(kinds) if k == EQ_LOWER]
    used = set()
    for i, k in enumerate(kinds):
        if k != EQ_UPPER:
            continue
        for j in lowers:
            if j in used:
                continue
            if np.array_equal(A[j], -A[i]) and b[j] == -b[i]:
                pair[i], pair[j] = j, i
                used.add(j)
                break
        else:
            raise DimensionError(f"equality-pair-upper row {i} has no negated partner")
    if len(used) != len(lowers):
        raise DimensionError("unmatched equality-pair-lower row")
    return tuple(pair)


@dataclass(frozen=True, eq=False)
class DualPoint:
    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).reshape(-1)
        if np.any(lam < 0):
            raise ValueError("prices must be nonnegative")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True, eq=False)
class BlockPrimalPoint:
    blocks: tuple[np.ndarray, ...]
    f_values: tuple[float, ...] | None = None

    def __post_init__(self):
        blocks = tuple(np.array(x, dtype=float).reshape(-1) for x in self.blocks)
        for x in blocks:
            x.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        if self.f_values is not None:
            if len(self.f_values) != len(blocks):
                raise DimensionError("one f value per block")
            object.__setattr__(self, "f_values", tuple(float(v) for v in self.f_values))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @classmethod
    def from_flat(cls, x: np.ndarray, dims: Sequence[int]) -> BlockPrimalPoint:
        splits = np.cumsum(dims)[:-1]
        return cls(tuple(np.split(np.asarray(x, dtype=float), splits)))


@dataclass(frozen=True, eq=False)
class Residuals:
    r_p: float
    r_c: float

    def __post_init__(self):
        if self.r_p < 0 or self.r_c < 0:
            raise ValueError("residuals are nonnegative")

    @property
    def total(self) -> float:
        return self.r_p + self.r_c


def _check_dual(coupling: BlockAffineCoupling, dual: DualPoint):
    if dual.lam.shape != (coupling.m,):
        raise DimensionError(f"lambda has length {dual.lam.shape[0]}, expected {coupling.m}")


def local_prices(coupling: BlockAffineCoupling, dual: DualPoint) -> list[np.ndarray]:
    """Per-agent prices ``y_i = -A_i^T lambda``."""
    _check_dual(coupling, dual)
    return [-(B.T @ dual.lam) for B in coupling.blocks]


def residuals(coupling: BlockAffineCoupling, x, dual: DualPoint) -> Residuals:
    _check_dual(coupling, dual)
    r = coupling.Ax(x) - coupling.b
    return residuals_from_violation(r, dual.lam)


def residuals_from_violation(r: np.ndarray, lam: np.ndarray) -> Residuals:
    return Residuals(float(np.maximum(r, 0.0).sum()), float(lam @ np.abs(r)))


def relative_primal_infeasibility(res: Residuals, coupling: BlockAffineCoupling) -> float:
    nb = float(np.linalg.norm(coupling.b))
    if nb == 0.0:
        raise ValueError("||b|| = 0: relative infeasibility undefined, use an absolute threshold")
    return res.r_p / nb


def dual_value(coupling: BlockAffineCoupling, dual: DualPoint, oracle_responses: BlockPrimalPoint) -> float:
    """g(lambda) from exact oracle responses at ``y = -A^T lambda``."""
    if oracle_responses.f_values is None:
        raise ValueError("oracle responses must carry per-block f values")
    ys = local_prices(coupling, dual)
    total = sum(f - y @ x for f, y, x in zip(oracle_responses.f_values, ys, oracle_responses.blocks))
    return float(total - dual.lam @ coupling.b)


def stopping_check(res: Residuals, eps_r: float) -> bool:
    return res.r_p + res.r_c <= eps_r


def relative_suboptimality(f: float, f_star: float) -> float:
    if abs(f_star) < 1e-12:
        return f - f_star
    return (f - f_star) / abs(f_star)


# -- instance JSON ---------------------------------------------------------

def coupling_to_dict(coupling: BlockAffineCoupling) -> dict[str, Any]:
    return {
        "m": coupling.m,
        "block_dims": list(coupling.block_dims),
        "A_blocks": [B.tolist() for B in coupling.blocks],
        "b": coupling.b.tolist(),
        "row_kind": list(coupling.row_kind),
    }


def coupling_from_dict(d: dict[str, Any]) -> BlockAffineCoupling:
    blocks = [np.asarray(B, dtype=float).reshape(d["m"], n) for B, n in zip(d["A_blocks"], d["block_dims"])]
    return BlockAffineCoupling(tuple(blocks), np.asarray(d["b"], dtype=float), tuple(d["row_kind"]))


def dump_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def load_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())
