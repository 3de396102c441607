"""Bayesian fitting of the log-linear model with interaction thresholding.

Interactions get independent Gaussian priors with mean zero and precision
``lambda``.  ``lambda = 0`` is an improper flat prior, in which case pairs
of lists with no common case have their interaction fixed at minus
infinity and the cells containing such a pair are removed before sampling.

The threshold procedure runs in two stages.  Stage one samples the model
with every admissible interaction.  Interactions whose ratio
``|posterior mean / posterior sd|`` falls below ``tau`` are then dropped,
and stage two samples the reduced model with a fresh seed.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _sampler
from .design import ModelSpec, build_design, matrix_rank, pair_label
from .diagnostics import effective_sample_size, split_rhat
from .exceptions import DataError, FitError
from .select import default_threads
from .tables import CellTable, ListSystem, zero_fill

log = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.025, 0.10, 0.50, 0.90, 0.975)
ACCEPT_RANGE = (0.05, 0.7)
RHAT_MAX = 1.05
BLOCK = 8192


class ConvergenceWarning(UserWarning):
    """MCMC acceptance or R-hat outside the accepted range."""


@dataclass(frozen=True)
class PriorConfig:
    """Prior on the log-linear parameters.

    Parameters
    ----------
    precision : float
        ``lambda``, the precision of the zero-mean Gaussian prior on each
        interaction.  Zero means an improper flat prior on all parameters.
    main_effect_variance : float
        Variance of the Gaussian prior on the intercept and main effects,
        used only when ``precision > 0``.
    """

    precision: float = 1.0
    main_effect_variance: float = 1e4

    def __post_init__(self):
        if not self.precision >= 0 or math.isinf(self.precision):
            raise ValueError("precision must be finite and non-negative")
        if not self.main_effect_variance > 0:
            raise ValueError("main_effect_variance must be positive")

    @classmethod
    def uniform(cls) -> "PriorConfig":
        return cls(0.0)

    @classmethod
    def from_variance(cls, variance: float, main_effect_variance: float = 1e4) -> "PriorConfig":
        if not variance > 0:
            raise ValueError("variance must be positive")
        return cls(1.0 / variance, main_effect_variance)

    @property
    def improper(self) -> bool:
        return self.precision == 0.0

    @property
    def label(self) -> str:
        if self.improper:
            return "Uniform"
        return f"Variance {1.0 / self.precision:g}"

    def precisions(self, k: int, n_interactions: int) -> np.ndarray:
        """Prior precision per design column."""
        if self.improper:
            return np.zeros(1 + k + n_interactions)
        main = np.full(1 + k, 1.0 / self.main_effect_variance)
        return np.r_[main, np.full(n_interactions, self.precision)]


@dataclass(frozen=True)
class McmcSettings:
    """Chain lengths and seeding.

    Each chain runs ``burn_in + kept_samples * thinning`` iterations and
    keeps ``kept_samples`` draws.  The proposal adapts during burn-in only.
    """

    burn_in: int = 100_000
    kept_samples: int = 10_000
    thinning: int = 100
    chains: int = 4
    seed: int = 1
    adapt: bool = True
    threads: int | None = None

    def __post_init__(self):
        for name in ("burn_in", "kept_samples", "thinning", "chains"):
            v = getattr(self, name)
            if int(v) != v or v < (0 if name == "burn_in" else 1):
                raise ValueError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def scaled(self, factor: float) -> "McmcSettings":
        """Same settings with burn-in and thinning multiplied by ``factor``."""
        return McmcSettings(
            burn_in=max(0, int(self.burn_in * factor)),
            kept_samples=self.kept_samples,
            thinning=max(1, int(self.thinning * factor)),
            chains=self.chains,
            seed=self.seed,
            adapt=self.adapt,
            threads=self.threads,
        )


@dataclass(frozen=True)
class Chains:
    """Raw draws of shape ``(chains, kept, params)``."""

    draws: np.ndarray
    col_labels: tuple[str, ...]
    acceptance: tuple[float, ...]
    observed_total: float
    spec: ModelSpec
    list_names: tuple[str, ...]

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def pooled(self, label: str) -> np.ndarray:
        return self.draws[:, :, self.col_labels.index(label)].ravel()

    def totals(self) -> np.ndarray:
        """Per-draw total population, shape ``(chains, kept)``."""
        return self.observed_total + np.exp(self.draws[:, :, 0])

    def to_csv(self) -> str:
        """One row per kept draw; columns ``chain``, ``draw``, parameters, ``total``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "draw", *self.col_labels, "total"])
        tot = self.totals()
        for c in range(self.n_chains):
            for i in range(self.draws.shape[1]):
                w.writerow([c, i, *(repr(float(v)) for v in self.draws[c, i]), repr(float(tot[c, i]))])
        return buf.getvalue()


def remove_empty_overlaps(data: ListSystem | CellTable) -> tuple[CellTable, tuple[tuple[int, int], ...]]:
    """Drop cells made structurally empty by list pairs with no common case.

    A pair ``{i, j}`` is empty when every cell containing both lists has a
    zero count.  Under a flat prior its interaction sits at minus infinity,
    so every cell containing an empty pair has expected count zero and
    carries no information about the other parameters.

    Returns
    -------
    table : CellTable
        The remaining cells.
    pairs : tuple of (i, j)
        The empty pairs in lexicographic order.
    """
    table = zero_fill(data) if isinstance(data, ListSystem) else data
    member = table.membership()
    counts = np.asarray(table.counts)
    keep = np.ones(len(table), dtype=bool)
    found: list[tuple[int, int]] = []
    # removed cells all have zero counts, so overlap totals never change and
    # the result does not depend on the order pairs are examined in
    changed = True
    while changed:
        changed = False
        for i, j in itertools.combinations(range(table.k), 2):
            if (i, j) in found:
                continue
            both = keep & member[:, i] & member[:, j]
            if both.any() and counts[both].sum() == 0:
                found.append((i, j))
                keep &= ~both
                changed = True
    return table.drop_cells(keep), tuple(sorted(found))


def _csr(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(X)
    indptr = np.zeros(X.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64)


def posterior_mode(X: np.ndarray, y: np.ndarray, prec: np.ndarray,
                   max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Penalised IRLS for the posterior mode.

    Returns the mode (or the last iterate when the flat-prior mode lies at
    infinity) and the negative Hessian of the log posterior there.
    """
    beta = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]
    P = np.diag(prec)

    def obj(b):
        eta = np.minimum(X @ b, 700.0)
        return float(y @ eta - np.exp(eta).sum() - 0.5 * prec @ (b * b))

    cur = obj(beta)
    for _ in range(max_iter):
        mu = np.exp(np.minimum(X @ beta, 700.0))
        H = X.T @ (X * mu[:, None]) + P
        g = X.T @ (y - mu) - prec * beta
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            new = beta + t * step
            val = obj(new)
            if val >= cur - 1e-12:
                break
            t *= 0.5
        beta = new
        if abs(val - cur) < 1e-12 * (abs(cur) + 1.0):
            cur = val
            break
        cur = val
    mu = np.exp(np.minimum(X @ beta, 700.0))
    return beta, X.T @ (X * mu[:, None]) + P


def _proposal_factor(H: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``2.38^2/p`` times the ridge-stabilised inverse of ``H``.

    Eigenvalues are floored at 1 so that directions the likelihood does not
    constrain (an extended MLE) get unit-scale proposals instead of infinite
    ones.
    """
    p = H.shape[0]
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    w = np.maximum(w, max(1.0, 1e-8 * w.max()))
    cov = (V / w) @ V.T * (2.38 ** 2 / p)
    return np.linalg.cholesky(0.5 * (cov + cov.T))


def _stage_seeds(seed: int, stage: int, chains: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence([int(seed), int(stage)]).spawn(chains)


def _run_chain(ss, X, y, prec, mode, chol0, settings):
    rng = np.random.Generator(np.random.PCG64(ss))
    indptr, indices = _csr(X)
    p = X.shape[1]
    chol = chol0.copy()
    theta = mode + chol @ rng.standard_normal(p)
    logp = _sampler.log_posterior(theta, indptr, indices, y, prec)
    if not np.isfinite(logp):
        theta = mode.copy()
        logp = _sampler.log_posterior(theta, indptr, indices, y, prec)
    state = np.zeros(4)
    mean = theta.copy()
    cov_sum = np.zeros((p, p))
    empty = np.empty((0, p))

    remaining = settings.burn_in
    while remaining > 0:
        n = min(BLOCK, remaining)
        z = rng.standard_normal((n, p))
        lu = np.log(rng.random(n))
        logp, _ = _sampler.run_block(theta, logp, indptr, indices, y, prec, chol, state,
                                     cov_sum, mean, z, lu, settings.adapt, 1, empty, 0)
        remaining -= n
    # freeze the kernel
    state[1] = 0.0
    state[2] = 0.0
    out = np.empty((settings.kept_samples, p))
    pos = 0
    remaining = settings.kept_samples * settings.thinning
    while remaining > 0:
        n = min(BLOCK, remaining)
        z = rng.standard_normal((n, p))
        lu = np.log(rng.random(n))
        logp, pos = _sampler.run_block(theta, logp, indptr, indices, y, prec, chol, state,
                                       cov_sum, mean, z, lu, False, settings.thinning, out, pos)
        remaining -= n
    return out, state[2] / (settings.kept_samples * settings.thinning)


def sample_posterior(X: np.ndarray, y: np.ndarray, prec: np.ndarray,
                     settings: McmcSettings | None = None,
                     stage: int = 1) -> tuple[np.ndarray, tuple[float, ...]]:
    """Adaptive random-walk Metropolis for a Poisson model with binary design ``X``.

    The log posterior is ``sum(y * eta - exp(eta)) - sum(prec * theta**2) / 2``.
    The proposal starts from ``2.38^2/p`` times the inverse negative Hessian
    at the posterior mode.  During burn-in its scale is tuned towards an
    acceptance rate of 0.25 and its shape towards the running posterior
    covariance.  Afterwards the kernel is fixed.

    Chains use independent substreams derived from ``settings.seed`` and
    ``stage``, so results do not depend on the thread count.

    Returns
    -------
    draws : ndarray, shape (chains, kept, p)
    acceptance : tuple of float
        Post-burn-in acceptance rate per chain.
    """
    settings = settings or McmcSettings()
    X = np.ascontiguousarray(X, dtype=float)
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("design must be binary")
    y = np.ascontiguousarray(y, dtype=float)
    prec = np.ascontiguousarray(prec, dtype=float)
    mode, H = posterior_mode(X, y, prec)
    chol0 = _proposal_factor(H)
    seeds = _stage_seeds(settings.seed, stage, settings.chains)
    threads = settings.threads or default_threads()

    def job(ss):
        return _run_chain(ss, X, y, prec, mode, chol0, settings)

    if threads > 1 and settings.chains > 1:
        with ThreadPoolExecutor(min(threads, settings.chains)) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(ss) for ss in seeds]
    return np.stack([r[0] for r in results]), tuple(float(r[1]) for r in results)


def mcmc_sample(table: CellTable, spec: ModelSpec, prior: PriorConfig,
                settings: McmcSettings | None = None, stage: int = 1) -> Chains:
    """Sample the posterior of a log-linear model on ``table``.

    With a flat prior the table must already have had its empty overlaps
    removed (see :func:`remove_empty_overlaps`) and ``spec`` must leave out
    the pairs fixed at minus infinity.
    """
    dm = build_design(table, spec)
    if table.total() <= 0:
        raise DataError("no observed cases")
    if matrix_rank(dm.matrix) < dm.n_params:
        raise FitError("design matrix is rank deficient; the posterior is improper")
    prec = prior.precisions(table.k, len(spec.interactions))
    draws, acc = sample_posterior(dm.matrix, table.counts, prec, settings, stage)
    return Chains(draws, dm.col_labels, acc, table.total(), spec, table.list_names)


def _q_key(q: float) -> str:
    return f"{100 * q:g}"


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior summary of one fitted stage, plus thresholding bookkeeping.

    ``total_quantiles`` maps ``"2.5"``, ``"10"``, ``"50"``, ``"90"``,
    ``"97.5"`` to quantiles of ``observed_total + exp(mu)``.
    """

    col_labels: tuple[str, ...]
    mean: dict
    sd: dict
    quantiles: dict
    total_quantiles: dict
    total_mean: float
    observed_total: float
    rhat: dict
    ess: dict
    acceptance: tuple[float, ...]
    stage: int = 1
    selected_interactions: tuple[str, ...] = ()
    neg_infinity_pairs: tuple[str, ...] = ()
    ratios: dict = field(default_factory=dict)
    prior: str = ""
    tau: float | None = None
    warnings: tuple[str, ...] = ()
    chains: Chains | None = field(default=None, repr=False, compare=False)

    @property
    def median(self) -> float:
        return self.total_quantiles["50"]

    def quantile_row(self) -> list[float]:
        return [self.total_quantiles[_q_key(q)] for q in QUANTILE_LEVELS]

    def table_row(self, scale: float = 1000.0, digits: int = 1) -> str:
        """Prior, threshold and quantiles in thousands, as a text row."""
        tau = "" if self.tau is None else f"{self.tau:g}"
        vals = " ".join(f"{v / scale:.{digits}f}" for v in self.quantile_row())
        return f"{self.prior}\t{tau}\t{vals}"

    def to_dict(self) -> dict:
        def fin(v):
            return v if math.isfinite(v) else None
        return {
            "prior": self.prior,
            "tau": self.tau,
            "stage": self.stage,
            "observed_total": self.observed_total,
            "total_mean": self.total_mean,
            "total_quantiles": dict(self.total_quantiles),
            "selected_interactions": list(self.selected_interactions),
            "neg_infinity_pairs": list(self.neg_infinity_pairs),
            "ratios": {k: fin(v) for k, v in self.ratios.items()},
            "parameters": {
                lab: {
                    "mean": self.mean[lab],
                    "sd": self.sd[lab],
                    "quantiles": self.quantiles[lab],
                    "rhat": fin(self.rhat[lab]),
                    "ess": fin(self.ess[lab]),
                }
                for lab in self.col_labels
            },
            "total_rhat": fin(self.rhat["total"]),
            "total_ess": fin(self.ess["total"]),
            "acceptance": list(self.acceptance),
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def summarize(chains: Chains, observed_total: float | None = None) -> PosteriorSummary:
    """Pooled quantiles, split-R-hat and ESS for every parameter and the total."""
    if chains.draws.size == 0:
        raise ValueError("no draws to summarise")
    obs = chains.observed_total if observed_total is None else float(observed_total)
    d = chains.draws
    mean, sd, quant, rhat, ess = {}, {}, {}, {}, {}
    for j, lab in enumerate(chains.col_labels):
        x = d[:, :, j]
        flat = x.ravel()
        mean[lab] = float(flat.mean())
        sd[lab] = float(flat.std(ddof=1)) if flat.size > 1 else 0.0
        quant[lab] = {_q_key(q): float(v) for q, v in zip(QUANTILE_LEVELS, np.quantile(flat, QUANTILE_LEVELS))}
        rhat[lab] = split_rhat(x)
        ess[lab] = effective_sample_size(x)
    tot = obs + np.exp(d[:, :, 0])
    tq = np.maximum.accumulate(np.quantile(tot.ravel(), QUANTILE_LEVELS))
    rhat["total"] = split_rhat(tot)
    ess["total"] = effective_sample_size(tot)
    notes = []
    for c, a in enumerate(chains.acceptance):
        if not ACCEPT_RANGE[0] <= a <= ACCEPT_RANGE[1]:
            notes.append(f"chain {c} acceptance rate {a:.3f} outside [{ACCEPT_RANGE[0]}, {ACCEPT_RANGE[1]}]")
    bad = [lab for lab, r in rhat.items() if r > RHAT_MAX]
    if bad:
        notes.append(f"split R-hat above {RHAT_MAX} for: {', '.join(bad)}")
    for msg in notes:
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return PosteriorSummary(
        col_labels=chains.col_labels,
        mean=mean,
        sd=sd,
        quantiles=quant,
        total_quantiles={_q_key(q): float(v) for q, v in zip(QUANTILE_LEVELS, tq)},
        total_mean=float(tot.mean()),
        observed_total=obs,
        rhat=rhat,
        ess=ess,
        acceptance=chains.acceptance,
        warnings=tuple(notes),
        chains=chains,
    )


def interaction_ratios(summary: PosteriorSummary, labels) -> dict:
    """``|mean / sd|`` for each interaction label."""
    out = {}
    for lab in labels:
        s = summary.sd[lab]
        out[lab] = abs(summary.mean[lab]) / s if s > 0 else math.inf
    return out


def select_interactions(ratios: dict, tau: float) -> list[str]:
    """Interactions whose ratio reaches ``tau`` (a ratio equal to ``tau`` survives)."""
    return [lab for lab, r in ratios.items() if not r < tau]


def _prepare(system: ListSystem, prior: PriorConfig):
    if prior.improper:
        table, neg = remove_empty_overlaps(system)
    else:
        table, neg = zero_fill(system), ()
    full = ModelSpec.all_pairs(system.k).without(neg)
    return table, neg, full


def main_effects_posterior(system: ListSystem, prior: PriorConfig,
                           settings: McmcSettings | None = None) -> PosteriorSummary:
    """Posterior of the main-effects model on the full table.

    Uses the stage-two seed, so it matches ``threshold_refit`` with
    ``tau = inf`` whenever no cells were removed.
    """
    settings = settings or McmcSettings()
    spec = ModelSpec.main_effects(system.k)
    ch = mcmc_sample(zero_fill(system), spec, prior, settings, stage=2)
    s = summarize(ch)
    return _annotate(s, stage=2, prior=prior, tau=None, selected=(), neg=(), ratios={})


def _annotate(s, **kw):
    from dataclasses import replace
    return replace(
        s,
        stage=kw["stage"],
        prior=kw["prior"].label,
        tau=kw["tau"],
        selected_interactions=tuple(kw["selected"]),
        neg_infinity_pairs=tuple(kw["neg"]),
        ratios=dict(kw["ratios"]),
    )


def threshold_refit(system: ListSystem, prior: PriorConfig, tau: float,
                    settings: McmcSettings | None = None) -> PosteriorSummary:
    """Two-stage Bayesian fit with interaction thresholding.

    Parameters
    ----------
    system : ListSystem
    prior : PriorConfig
    tau : float
        Threshold on ``|mean/sd|``.  ``0`` keeps every interaction and
        skips the second stage; ``inf`` drops them all without running the
        first stage.
    settings : McmcSettings, optional

    Returns
    -------
    PosteriorSummary
        Summary of the final stage, with the surviving interactions, the
        pairs fixed at minus infinity and the stage-one ratios.
    """
    if not tau >= 0:
        raise ValueError("tau must be non-negative")
    settings = settings or McmcSettings()
    names = system.list_names
    table, neg, full = _prepare(system, prior)
    neg_labels = [pair_label(names, p) for p in neg]
    int_labels = full.labels(names)

    if math.isinf(tau) or not full.interactions:
        ratios = {}
        keep = []
    else:
        stage1 = summarize(mcmc_sample(table, full, prior, settings, stage=1))
        ratios = interaction_ratios(stage1, int_labels)
        if tau == 0:
            return _annotate(stage1, stage=1, prior=prior, tau=tau, selected=int_labels,
                             neg=neg_labels, ratios=ratios)
        keep = select_interactions(ratios, tau)
    spec = ModelSpec.from_labels(names, keep) if keep else ModelSpec.main_effects(system.k)
    if not keep:
        log.info("no interactions pass tau=%g; refitting main effects", tau)
    s = summarize(mcmc_sample(table, spec, prior, settings, stage=2))
    return _annotate(s, stage=2, prior=prior, tau=tau, selected=spec.labels(names),
                     neg=neg_labels, ratios=ratios)


def total_histogram(summary: PosteriorSummary, bins: int = 50) -> list[dict]:
    """Histogram of the pooled total-population draws."""
    if summary.chains is None:
        raise ValueError("summary carries no chains")
    tot = summary.chains.totals().ravel()
    counts, edges = np.histogram(tot, bins=bins)
    return [
        {"lower": float(a), "upper": float(b), "count": int(c)}
        for a, b, c in zip(edges[:-1], edges[1:], counts)
    ]
