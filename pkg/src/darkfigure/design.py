"""Log-linear model specifications, design matrices and estimability checks.

The model for the expected count of cell ``A`` is::

    log lambda_A = mu + sum_{i in A} alpha_i + sum_{i<j, i,j in A} beta_ij

with the dark figure equal to ``exp(mu)``.  Only pairwise interactions are
supported.

Existence check
---------------
Fitted means are driven to zero on the zero cells ``Z`` that some direction
``d`` in parameter space can push down while leaving every positive cell
unchanged::

    x_A . d = 0   for A with N_A > 0
    x_A . d <= 0  for A in Z

A single linear program finds all such cells at once: maximise
``sum_A s_A`` over ``A in Z`` subject to the constraints above,
``0 <= s_A <= 1`` and ``s_A <= -x_A . d``.  Cells with ``s_A > 0`` at the
optimum form the zeroed set; the remaining cells ``F`` carry positive
fitted means in the extended MLE.  The dark figure ``exp(mu)`` is then
finite exactly when the empty-cell row ``x_0 = (1, 0, ..., 0)`` lies in the
row space of ``X_F``.  Otherwise ``mu`` can grow without bound along a
direction that leaves the likelihood unchanged, and the estimate is infinite.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from .exceptions import DataError
from .tables import CellTable

RANK_RTOL = 1e-8

Pair = tuple[int, int]


@dataclass(frozen=True)
class ModelSpec:
    """Which pairwise interactions enter the model.

    Intercept and main effects are always present.
    """

    k: int
    interactions: frozenset[Pair] = field(default_factory=frozenset)

    def __post_init__(self):
        pairs = set()
        for p in self.interactions:
            i, j = sorted(int(x) for x in p)
            if i == j or i < 0 or j >= self.k:
                raise DataError(f"invalid interaction {p} for {self.k} lists")
            pairs.add((i, j))
        object.__setattr__(self, "interactions", frozenset(pairs))

    @classmethod
    def main_effects(cls, k: int) -> "ModelSpec":
        return cls(k)

    @classmethod
    def all_pairs(cls, k: int) -> "ModelSpec":
        return cls(k, frozenset(itertools.combinations(range(k), 2)))

    @classmethod
    def from_labels(cls, names: Sequence[str], labels: Iterable[str] | str) -> "ModelSpec":
        """Parse ``"LA:NG,PF:GP"`` (or an iterable of ``"LA:NG"``) against ``names``."""
        if isinstance(labels, str):
            labels = [x for x in labels.replace("+", ",").split(",") if x.strip()]
        names = list(names)
        pairs = set()
        for lab in labels:
            parts = [x.strip() for x in lab.split(":")]
            if len(parts) != 2:
                raise DataError(f"interaction {lab!r} must look like A:B")
            for x in parts:
                if x not in names:
                    raise DataError(f"unknown list {x!r} in interaction {lab!r}")
            pairs.add((names.index(parts[0]), names.index(parts[1])))
        return cls(len(names), frozenset(pairs))

    @property
    def pairs(self) -> list[Pair]:
        """Interactions in lexicographic order (the design column order)."""
        return sorted(self.interactions)

    @property
    def n_params(self) -> int:
        return 1 + self.k + len(self.interactions)

    def with_pair(self, pair: Pair) -> "ModelSpec":
        return ModelSpec(self.k, self.interactions | {tuple(sorted(pair))})

    def without(self, pairs: Iterable[Pair]) -> "ModelSpec":
        drop = {tuple(sorted(p)) for p in pairs}
        return ModelSpec(self.k, frozenset(p for p in self.interactions if p not in drop))

    def labels(self, names: Sequence[str]) -> list[str]:
        return [f"{names[i]}:{names[j]}" for i, j in self.pairs]

    def spec_id(self, names: Sequence[str]) -> str:
        return "+".join(self.labels(names)) or "main"


def pair_label(names: Sequence[str], pair: Pair) -> str:
    return f"{names[pair[0]]}:{names[pair[1]]}"


def column_labels(names: Sequence[str], spec: ModelSpec) -> list[str]:
    return ["(Intercept)"] + list(names) + spec.labels(names)


def design_rows(masks: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Binary design matrix rows for the given cell bitmasks."""
    masks = np.asarray(masks, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(spec.k)) & 1).astype(float)
    cols = [np.ones(len(masks)), *member.T]
    for i, j in spec.pairs:
        cols.append(member[:, i] * member[:, j])
    return np.column_stack(cols)


@dataclass(frozen=True)
class DesignMatrix:
    """Design matrix aligned with the observed counts of a cell table."""

    matrix: np.ndarray
    counts: np.ndarray
    masks: np.ndarray
    col_labels: tuple[str, ...]
    spec: ModelSpec
    list_names: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1]

    def interaction_columns(self) -> range:
        return range(1 + self.spec.k, self.n_params)


def build_design(table: CellTable, spec: ModelSpec) -> DesignMatrix:
    """Columns: intercept, main effects in list order, interactions in pair order."""
    if spec.k != table.k:
        raise DataError(f"model has {spec.k} lists but table has {table.k}")
    X = design_rows(table.masks, spec)
    X.flags.writeable = False
    return DesignMatrix(
        matrix=X,
        counts=table.counts,
        masks=table.masks,
        col_labels=tuple(column_labels(table.list_names, spec)),
        spec=spec,
        list_names=table.list_names,
    )


@dataclass(frozen=True)
class DiagnosticReport:
    full_rank: bool
    rank: int
    n_params: int
    existence_ok: bool | None = None
    status: str = "not checked"
    deficient_columns: tuple[str, ...] = ()
    zeroed_cells: int = 0

    def to_dict(self) -> dict:
        return {
            "full_rank": self.full_rank,
            "rank": self.rank,
            "n_params": self.n_params,
            "existence_ok": self.existence_ok,
            "status": self.status,
            "deficient_columns": list(self.deficient_columns),
            "zeroed_cells": self.zeroed_cells,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def matrix_rank(X: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if X.size == 0:
        return 0
    s = linalg.svd(X, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


def check_identifiability(table: CellTable, spec: ModelSpec) -> DiagnosticReport:
    """Rank of the design by SVD; deficient columns from pivoted QR."""
    dm = build_design(table, spec)
    X = dm.matrix
    p = X.shape[1]
    rank = matrix_rank(X)
    deficient: tuple[str, ...] = ()
    if rank < p:
        _, _, piv = linalg.qr(X, mode="economic", pivoting=True)
        deficient = tuple(dm.col_labels[c] for c in sorted(piv[rank:]))
    full = rank == p
    return DiagnosticReport(
        full_rank=full,
        rank=rank,
        n_params=p,
        status="identifiable" if full else "rank deficient",
        deficient_columns=deficient,
    )


def zeroed_cells(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray | None, str]:
    """Zero cells whose extended-MLE fitted mean is zero.

    Returns a boolean mask over rows (``None`` when the LP fails) and the
    solver status message.
    """
    pos = y > 0
    zero = ~pos
    nz = int(zero.sum())
    if nz == 0:
        return np.zeros(len(y), dtype=bool), "no zero cells"
    p = X.shape[1]
    Xz = X[zero]
    # variables: d (p, free), s (nz, in [0, 1]); maximise sum(s)
    c = np.r_[np.zeros(p), -np.ones(nz)]
    A_ub = np.vstack([
        np.hstack([Xz, np.zeros((nz, nz))]),      # x_A d <= 0
        np.hstack([Xz, np.eye(nz)]),              # s_A + x_A d <= 0
    ])
    b_ub = np.zeros(2 * nz)
    A_eq = np.hstack([X[pos], np.zeros((int(pos.sum()), nz))]) if pos.any() else None
    b_eq = np.zeros(int(pos.sum())) if pos.any() else None
    bounds = [(None, None)] * p + [(0.0, 1.0)] * nz
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None, res.message
    out = np.zeros(len(y), dtype=bool)
    out[np.flatnonzero(zero)] = res.x[p:] > 1e-7
    return out, "optimal"


def check_existence(table: CellTable, spec: ModelSpec) -> DiagnosticReport:
    """Whether the extended MLE exists with a finite dark-figure estimate."""
    ident = check_identifiability(table, spec)
    if not ident.full_rank:
        return DiagnosticReport(
            full_rank=False, rank=ident.rank, n_params=ident.n_params,
            existence_ok=None, status="moot: design is rank deficient",
            deficient_columns=ident.deficient_columns,
        )
    X = build_design(table, spec).matrix
    y = np.asarray(table.counts)
    if y.sum() <= 0:
        return DiagnosticReport(True, ident.rank, ident.n_params, False, "no observed cases")
    zeroed, msg = zeroed_cells(X, y)
    if zeroed is None:
        return DiagnosticReport(True, ident.rank, ident.n_params, None, f"indeterminate: LP failed ({msg})")
    XF = X[~zeroed]
    rF = matrix_rank(XF)
    x0 = np.zeros((1, X.shape[1]))
    x0[0, 0] = 1.0
    finite = matrix_rank(np.vstack([XF, x0])) == rF
    n_zeroed = int(zeroed.sum())
    if finite:
        status = "MLE exists" if n_zeroed == 0 else "extended MLE exists"
    else:
        status = "dark figure not estimable: estimate diverges"
    return DiagnosticReport(True, ident.rank, ident.n_params, bool(finite), status, (), n_zeroed)


def check_all_models(table: CellTable) -> DiagnosticReport:
    """Check every pairwise-interaction model at once.

    Both checks are monotone under dropping interactions: a submodel's
    design has a subset of the columns, and its zeroed set can only shrink,
    so the empty-cell row stays in the span of the positive-fit rows.
    Passing for the all-pairs model therefore implies passing for all
    ``2**(K(K-1)/2)`` submodels.
    """
    return check_existence(table, ModelSpec.all_pairs(table.k))
