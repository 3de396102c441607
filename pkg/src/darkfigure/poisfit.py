"""Poisson log-linear maximum likelihood for multiple systems estimation.

The log-likelihood used throughout is ``sum(N_A log lambda_A - lambda_A)``;
the ``sum(log N_A!)`` constant is dropped.  It is identical for all models
fitted to one table, so AIC/BIC rankings and likelihood-ratio tests are
unaffected, but absolute AIC/BIC values differ from software that keeps it
(add ``2 * table.log_factorial_sum()`` to compare).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln

from .design import DesignMatrix, ModelSpec, build_design, matrix_rank
from .exceptions import DataError, FitError
from .tables import CellTable

log = logging.getLogger(__name__)

MAX_ITER = 100
DEV_RTOL = 1e-10
DIVERGE_COEF = -10.0
DIVERGE_MEAN = 1e-6
ETA_MAX = 700.0

# Upper profile endpoints are searched up to this multiple of the observed
# total; beyond it the bound is reported as infinite.
PROFILE_SEARCH_RATIO = 50.0


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    covariance: np.ndarray
    fitted: np.ndarray
    deviance: float
    loglik: float
    aic: float
    bic: float
    dark_figure: float
    total_observed: float
    diverged: tuple[str, ...]
    converged: bool
    iterations: int
    col_labels: tuple[str, ...]
    spec: ModelSpec | None = None
    n_for_bic: float = 0.0

    @property
    def total_estimate(self) -> float:
        return self.total_observed + self.dark_figure

    @property
    def n_params(self) -> int:
        return len(self.coefficients)

    @property
    def extended(self) -> bool:
        """True when the fit is an extended MLE (some interactions at minus infinity)."""
        return bool(self.diverged)

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, np.inf))

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.col_labels.index(label)])

    def to_dict(self) -> dict:
        return {
            "coefficients": dict(zip(self.col_labels, map(float, self.coefficients))),
            "std_errors": dict(zip(self.col_labels, map(float, self.std_errors()))),
            "deviance": self.deviance,
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "n_for_bic": self.n_for_bic,
            "dark_figure": self.dark_figure,
            "total_observed": self.total_observed,
            "total_estimate": self.total_estimate,
            "total_estimate_display": f"{self.total_estimate / 1000:.1f}K",
            "diverged": list(self.diverged),
            "converged": self.converged,
            "iterations": self.iterations,
        }


def poisson_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    """``sum(y log mu - mu)`` with ``0 log 0 = 0``."""
    pos = y > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(y[pos] * np.log(mu[pos])) - np.sum(mu))


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    pos = y > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sum(y[pos] * np.log(y[pos] / mu[pos]))
    return float(2.0 * (t - np.sum(y - mu)))


def loglik_gradient(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Score vector ``X^T (y - mu)``."""
    return X.T @ (y - np.exp(X @ beta))


def loglik_at(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    return poisson_loglik(y, np.exp(X @ beta))


def _means(X, beta):
    return np.exp(np.minimum(X @ beta, ETA_MAX))


def irls(X: np.ndarray, y: np.ndarray, start: np.ndarray | None = None,
         max_iter: int = MAX_ITER, tol: float = DEV_RTOL):
    """Iteratively reweighted least squares for a Poisson log-linear model.

    Returns ``(beta, mu, deviance, iterations, converged)``.  A step that
    increases the deviance is halved until it does not.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if start is None:
        beta = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]
    else:
        beta = np.array(start, dtype=float)
    mu = _means(X, beta)
    dev = poisson_deviance(y, mu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.maximum(mu, 1e-300)
        z = X @ beta + (y - mu) / w
        sw = np.sqrt(w)
        new = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]
        new_mu = _means(X, new)
        new_dev = poisson_deviance(y, new_mu)
        halvings = 0
        while not new_dev <= dev * (1 + 1e-12) + 1e-12 and halvings < 40:
            new = 0.5 * (new + beta)
            new_mu = _means(X, new)
            new_dev = poisson_deviance(y, new_mu)
            halvings += 1
        change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, mu, dev = new, new_mu, new_dev
        if change < tol:
            converged = True
            break
    return beta, mu, dev, it, converged


def _diverged_columns(X, beta, mu, candidates):
    out = []
    for j in candidates:
        if beta[j] < DIVERGE_COEF:
            rows = X[:, j] > 0
            if rows.any() and np.all(mu[rows] < DIVERGE_MEAN):
                out.append(j)
    return out


def _covariance(X, mu, diverged):
    """Inverse Fisher information; diverged coefficients get infinite variance."""
    p = X.shape[1]
    keep = np.setdiff1d(np.arange(p), diverged)
    info = X[:, keep].T @ (X[:, keep] * mu[:, None])
    cov = np.zeros((p, p))
    try:
        sub = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        sub = np.linalg.pinv(info)
    cov[np.ix_(keep, keep)] = sub
    for j in diverged:
        cov[j, j] = math.inf
    return cov


def fit_mle(design: DesignMatrix, n_for_bic: float | None = None) -> FitResult:
    """Maximum-likelihood fit of a Poisson log-linear model by IRLS.

    Interactions whose coefficient drifts below -10 while every cell they
    load has a fitted mean below 1e-6 are reported in ``diverged``; the fit
    is then an extended MLE with those cells fitted as (numerically) zero.
    """
    X = design.matrix
    y = np.asarray(design.counts, dtype=float)
    n, p = X.shape
    if y.sum() <= 0:
        raise DataError("no observed cases to fit")
    if p > n:
        raise FitError(f"{p} parameters but only {n} cells")
    if matrix_rank(X) < p:
        raise FitError("design matrix is rank deficient")
    beta, mu, dev, it, converged = irls(X, y)
    div = _diverged_columns(X, beta, mu, design.interaction_columns())
    if not converged and not div:
        raise FitError(f"IRLS did not converge in {it} iterations")
    cov = _covariance(X, mu, div)
    ll = poisson_loglik(y, mu)
    nb = float(y.sum()) if n_for_bic is None else float(n_for_bic)
    aic, bic = _criteria(ll, p, nb)
    return FitResult(
        coefficients=beta,
        covariance=cov,
        fitted=mu,
        deviance=dev,
        loglik=ll,
        aic=aic,
        bic=bic,
        dark_figure=float(math.exp(min(beta[0], ETA_MAX))),
        total_observed=float(y.sum()),
        diverged=tuple(design.col_labels[j] for j in div),
        converged=converged or bool(div),
        iterations=it,
        col_labels=design.col_labels,
        spec=design.spec,
        n_for_bic=nb,
    )


def fit_table(table: CellTable, spec: ModelSpec | None = None, n_for_bic: float | None = None) -> FitResult:
    """Convenience wrapper: build the design and fit it."""
    spec = ModelSpec.main_effects(table.k) if spec is None else spec
    return fit_mle(build_design(table, spec), n_for_bic=n_for_bic)


def _criteria(loglik: float, p: int, n_for_bic: float) -> tuple[float, float]:
    return -2.0 * loglik + 2.0 * p, -2.0 * loglik + p * math.log(n_for_bic)


def information_criteria(fit: FitResult, n_for_bic: float | None = None) -> tuple[float, float]:
    """AIC and BIC; the BIC sample size defaults to the number of observed cases."""
    nb = fit.total_observed if n_for_bic is None else n_for_bic
    return _criteria(fit.loglik, fit.n_params, nb)


def lrt_pvalue(fit_small: FitResult, fit_big: FitResult, tol: float = 1e-6) -> float:
    """Likelihood-ratio test p-value for nested fits."""
    df = fit_big.n_params - fit_small.n_params
    if df < 1:
        raise ValueError("the larger model must have more parameters")
    if fit_small.spec is not None and fit_big.spec is not None:
        if not fit_small.spec.interactions <= fit_big.spec.interactions:
            raise ValueError("models are not nested")
    drop = fit_small.deviance - fit_big.deviance
    if drop < -tol * max(1.0, abs(fit_small.deviance)):
        raise ValueError(f"deviance increased by {-drop:.3g} in the larger model")
    return float(stats.chi2.sf(max(drop, 0.0), df))


def wald_pvalue(fit: FitResult, label: str) -> float:
    """Two-sided Wald p-value of a single coefficient."""
    j = fit.col_labels.index(label)
    se = math.sqrt(max(fit.covariance[j, j], 0.0))
    if se == 0.0 or not math.isfinite(se):
        return 1.0
    return float(2.0 * stats.norm.sf(abs(fit.coefficients[j]) / se))


def wald_log_pvalue(fit: FitResult, label: str) -> float:
    """Log of :func:`wald_pvalue`, accurate when the p-value underflows."""
    j = fit.col_labels.index(label)
    se = math.sqrt(max(fit.covariance[j, j], 0.0))
    if se == 0.0 or not math.isfinite(se):
        return 0.0
    return float(math.log(2.0) + stats.norm.logsf(abs(fit.coefficients[j]) / se))


# ---------------------------------------------------------------------------
# Profile likelihood intervals for the total population


@dataclass(frozen=True)
class ProfileInterval:
    level: float
    lower: float
    upper: float
    point: float
    unbounded: bool = False

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "lower": self.lower,
            "upper": self.upper if math.isfinite(self.upper) else "inf",
            "point": self.point,
            "unbounded": self.unbounded,
            "display": f"({self.lower / 1000:.1f}K, "
                       + (f"{self.upper / 1000:.1f}K)" if math.isfinite(self.upper) else "inf)"),
        }


@dataclass
class ProfileLikelihood:
    """Multinomial profile log-likelihood of the dark figure ``d``.

    At fixed ``d`` the table is augmented with the empty cell carrying
    pseudo-count ``d`` and the Poisson model is refitted; with total
    ``N = n + d`` the profile is::

        lgamma(N + 1) - lgamma(d + 1) + sum_A N_A log(mu_A / N) + d log(mu_0 / N)

    (the ``sum log N_A!`` constant is dropped).
    """

    X: np.ndarray
    y: np.ndarray
    _start: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.n = float(self.y.sum())
        x0 = np.zeros((1, self.X.shape[1]))
        x0[0, 0] = 1.0
        self.Xa = np.vstack([x0, self.X])

    def __call__(self, d: float) -> float:
        d = max(float(d), 0.0)
        ya = np.r_[d, self.y]
        beta, mu, _, _, _ = irls(self.Xa, ya, start=self._start)
        if np.all(np.isfinite(beta)):
            self._start = beta
        N = self.n + d
        pos = ya > 0
        return float(gammaln(N + 1) - gammaln(d + 1) + np.sum(ya[pos] * np.log(mu[pos] / N)))


def profile_ci(table: CellTable, spec: ModelSpec, levels=(0.8, 0.95),
               fit: FitResult | None = None,
               search_ratio: float = PROFILE_SEARCH_RATIO,
               xtol: float = 1e-3) -> dict[float, ProfileInterval]:
    """Profile-likelihood confidence intervals for the total population.

    Returns ``{level: ProfileInterval}``.  Endpoints solve
    ``2 (l_max - l(d)) = chi2_1(level)``; an upper endpoint beyond
    ``search_ratio`` times the observed total is reported as infinite with
    ``unbounded=True``.
    """
    design = build_design(table, spec)
    if fit is None:
        fit = fit_mle(design)
    if not math.isfinite(fit.dark_figure):
        raise FitError("total-population estimate is not finite")
    X = design.matrix
    y = np.asarray(design.counts, dtype=float)
    n = float(y.sum())
    prof = ProfileLikelihood(X, y)

    # maximise over t = log(d + 1)
    t_hat = math.log1p(fit.dark_figure)
    neg = lambda t: -prof(math.expm1(t))
    lo_t, hi_t = max(t_hat - 0.5, 0.0), t_hat + 0.5
    res = optimize.minimize_scalar(neg, bounds=(lo_t, hi_t), method="bounded",
                                   options={"xatol": 1e-9})
    if res.x - lo_t < 1e-6 and lo_t > 0 or hi_t - res.x < 1e-6:
        res = optimize.minimize_scalar(neg, bounds=(0.0, t_hat + 5.0), method="bounded",
                                       options={"xatol": 1e-9})
    d_max = math.expm1(res.x)
    l_max = -res.fun
    if prof(0.0) > l_max:
        d_max, l_max = 0.0, prof(0.0)

    cap = max(search_ratio * n - n, d_max * 2.0)
    out = {}
    for level in sorted(levels):
        crit = stats.chi2.ppf(level, 1) / 2.0
        f = lambda d: l_max - prof(d) - crit
        if f(0.0) <= 0:
            lower = 0.0
        else:
            lower = optimize.brentq(f, 0.0, d_max, xtol=xtol)
        hi = max(d_max * 1.5, d_max + 10.0)
        while f(hi) < 0 and hi < cap:
            hi = min(hi * 1.5, cap)
        if f(hi) < 0:
            upper, unbounded = math.inf, True
            warnings.warn(
                f"profile likelihood does not reach the {level:.0%} cut below "
                f"{search_ratio:g} x the observed total; upper bound reported as infinite",
                RuntimeWarning, stacklevel=2)
        else:
            upper, unbounded = optimize.brentq(f, d_max, hi, xtol=xtol), False
        out[level] = ProfileInterval(level, n + lower, n + upper, fit.total_estimate, unbounded)
    return out
