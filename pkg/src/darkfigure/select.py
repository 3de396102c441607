"""Frequentist model selection: stepwise AIC and exhaustive search."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import ModelSpec, build_design, check_existence, pair_label
from .exceptions import DataError, FitError
from .poisfit import FitResult, fit_mle, lrt_pvalue, wald_log_pvalue
from .tables import CellTable

log = logging.getLogger(__name__)

THREADS_ENV = "DARKFIGURE_THREADS"
OUTLIER_FENCE = 1.5


def default_threads() -> int:
    try:
        return max(1, int(os.environ[THREADS_ENV]))
    except (KeyError, ValueError):
        return os.cpu_count() or 1


@dataclass(frozen=True)
class TraceStep:
    pair: str
    pvalue: float
    aic: float
    total_estimate: float
    accepted: bool


@dataclass(frozen=True)
class StepwiseResult:
    spec: ModelSpec
    fit: FitResult
    trace: tuple[TraceStep, ...]
    list_names: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "interactions": self.spec.labels(self.list_names),
            "fit": self.fit.to_dict(),
            "trace": [vars(s) for s in self.trace],
        }


def _try_fit(table, spec):
    try:
        return fit_mle(build_design(table, spec))
    except FitError as exc:
        log.warning("skipping %s: %s", spec.spec_id(table.list_names), exc)
        return None


def stepwise_aic(table: CellTable, p_threshold: float = 0.05, test: str = "wald") -> StepwiseResult:
    """Forward selection of pairwise interactions by AIC.

    Starting from main effects, each step fits every single-interaction
    addition and takes the one with the lowest AIC (ties go to the
    lexicographically smallest pair).  Selection stops when no addition
    lowers the AIC or when the chosen interaction's p-value exceeds
    ``p_threshold``.  ``test="wald"`` uses the Wald p-value of the new
    coefficient, ``test="lrt"`` the likelihood-ratio test against the
    current model.
    """
    if not 0 < p_threshold <= 1:
        raise ValueError("p_threshold must lie in (0, 1]")
    if test not in ("wald", "lrt"):
        raise ValueError("test must be 'wald' or 'lrt'")
    names = table.list_names
    spec = ModelSpec.main_effects(table.k)
    fit = fit_mle(build_design(table, spec))
    trace = []
    log_thr = math.log(p_threshold)
    while True:
        best = None
        for pair in itertools.combinations(range(table.k), 2):
            if pair in spec.interactions:
                continue
            cand = _try_fit(table, spec.with_pair(pair))
            if cand is None:
                continue
            if best is None or cand.aic < best[1].aic:
                best = (pair, cand)
        if best is None or not best[1].aic < fit.aic:
            break
        pair, cand = best
        label = pair_label(names, pair)
        if test == "wald":
            log_p = wald_log_pvalue(cand, label)
        else:
            pv = lrt_pvalue(fit, cand)
            log_p = math.log(pv) if pv > 0 else -math.inf
        ok = log_p <= log_thr
        trace.append(TraceStep(label, math.exp(log_p), cand.aic, cand.total_estimate, ok))
        if not ok:
            break
        spec, fit = spec.with_pair(pair), cand
    return StepwiseResult(spec, fit, tuple(trace), names)


@dataclass(frozen=True)
class SearchEntry:
    spec: ModelSpec
    spec_id: str
    aic: float
    bic: float
    total_estimate: float
    diverged: bool
    existence_ok: bool | None
    fitted: bool = True

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "n_interactions": len(self.spec.interactions),
            "aic": self.aic,
            "bic": self.bic,
            "total_estimate": self.total_estimate,
            "diverged": self.diverged,
            "existence_ok": self.existence_ok,
        }


@dataclass(frozen=True)
class SearchResult:
    """All fitted models sorted by BIC ascending."""

    entries: tuple[SearchEntry, ...]
    list_names: tuple[str, ...]
    best_aic: int | None = None
    best_bic: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def eligible(self) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.fitted and e.existence_ok]

    def top(self, n: int, by: str = "bic") -> list[SearchEntry]:
        idx = sorted(self.eligible(), key=lambda i: (getattr(self.entries[i], by), i))
        return [self.entries[i] for i in idx[:n]]

    def find(self, spec: ModelSpec) -> SearchEntry:
        for e in self.entries:
            if e.spec == spec:
                return e
        raise KeyError(spec)

    def outlier_fence(self, multiplier: float = OUTLIER_FENCE) -> float:
        """Upper Tukey fence of the total estimates: ``Q3 + multiplier * IQR``."""
        totals = np.array([e.total_estimate for e in self.entries if e.fitted])
        q1, q3 = np.percentile(totals, [25, 75])
        return float(q3 + multiplier * (q3 - q1))

    def best_bic_within_fence(self, multiplier: float = OUTLIER_FENCE) -> SearchEntry:
        fence = self.outlier_fence(multiplier)
        ok = [i for i in self.eligible() if self.entries[i].total_estimate <= fence]
        return self.entries[min(ok, key=lambda i: (self.entries[i].bic, i))]

    def to_dict(self) -> dict:
        return {
            "lists": list(self.list_names),
            "best_aic": None if self.best_aic is None else self.entries[self.best_aic].spec_id,
            "best_bic": None if self.best_bic is None else self.entries[self.best_bic].spec_id,
            "entries": [e.to_dict() for e in self.entries],
        }


def _evaluate(table, spec, n_for_bic, check):
    sid = spec.spec_id(table.list_names)
    ex = check_existence(table, spec).existence_ok if check else True
    try:
        fit = fit_mle(build_design(table, spec), n_for_bic=n_for_bic)
    except FitError as exc:
        log.warning("model %s failed: %s", sid, exc)
        return SearchEntry(spec, sid, math.nan, math.nan, math.nan, False, ex, fitted=False)
    return SearchEntry(spec, sid, fit.aic, fit.bic, fit.total_estimate, fit.extended, ex)


def all_specs(k: int) -> list[ModelSpec]:
    pairs = list(itertools.combinations(range(k), 2))
    out = []
    for mask in range(1 << len(pairs)):
        out.append(ModelSpec(k, frozenset(p for b, p in enumerate(pairs) if mask >> b & 1)))
    return out


def exhaustive_search(table: CellTable, k_limit: int = 5, n_for_bic: float | None = None,
                      check: bool = True, threads: int | None = None) -> SearchResult:
    """Fit every subset of the pairwise interactions.

    Models whose dark figure is not estimable are listed but never chosen
    as best.
    """
    if table.k > k_limit:
        raise DataError(
            f"{table.k} lists means 2^{table.k * (table.k - 1) // 2} models; the limit is "
            f"{k_limit} lists. Consolidate or omit lists first (e.g. --consolidate A+B=AB)."
        )
    specs = all_specs(table.k)
    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            entries = list(pool.map(lambda s: _evaluate(table, s, n_for_bic, check), specs))
    else:
        entries = [_evaluate(table, s, n_for_bic, check) for s in specs]
    # stable sort keeps enumeration order among ties
    order = sorted(range(len(entries)),
                   key=lambda i: (not entries[i].fitted, entries[i].bic if entries[i].fitted else 0.0, i))
    entries = tuple(entries[i] for i in order)
    ok = [i for i, e in enumerate(entries) if e.fitted and e.existence_ok]
    best_bic = min(ok, key=lambda i: (entries[i].bic, i)) if ok else None
    best_aic = min(ok, key=lambda i: (entries[i].aic, i)) if ok else None
    return SearchResult(entries, table.list_names, best_aic, best_bic)


def export_scatter(result: SearchResult, omit_outliers: bool = False,
                   fence_multiplier: float = OUTLIER_FENCE) -> list[dict]:
    """Plot rows of ``-BIC`` against the total estimate, one per model."""
    if not result.entries:
        raise ValueError("empty search result")
    fence = result.outlier_fence(fence_multiplier) if omit_outliers else math.inf
    rows = []
    for i, e in enumerate(result.entries):
        if not e.fitted or e.total_estimate > fence:
            continue
        rows.append({
            "neg_bic": -e.bic,
            "total_estimate": e.total_estimate,
            "spec_id": e.spec_id,
            "diverged": e.diverged,
            "existence_ok": e.existence_ok,
            "best_bic": i == result.best_bic,
        })
    return rows


def scatter_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    fields = ["neg_bic", "total_estimate", "spec_id", "diverged", "existence_ok", "best_bic"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def scatter_json(rows: list[dict]) -> str:
    return json.dumps(rows, sort_keys=True)
