import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from darkfigure.datasets import builtin
from darkfigure.design import ModelSpec, build_design
from darkfigure.exceptions import DataError, FitError
from darkfigure.poisfit import (
    ProfileLikelihood,
    fit_mle,
    fit_table,
    information_criteria,
    loglik_at,
    loglik_gradient,
    lrt_pvalue,
    profile_ci,
    wald_log_pvalue,
    wald_pvalue,
)
from darkfigure.tables import ListSystem, zero_fill

counts = st.integers(1, 2000)


def two_list(a, b, c):
    return zero_fill(ListSystem(("A", "B"), {1: a, 2: b, 3: c}))


@given(counts, counts, counts)
def test_lincoln_petersen(a, b, c):
    fit = fit_table(two_list(a, b, c))
    assert fit.dark_figure == pytest.approx(a * b / c, rel=1e-8)
    assert fit.total_estimate == pytest.approx(a + b + c + a * b / c, rel=1e-8)


@given(st.lists(st.integers(1, 500), min_size=7, max_size=7))
def test_three_list_saturated_closed_form(n):
    # cells by bitmask 1..7: n[m - 1]
    t = zero_fill(ListSystem(("A", "B", "C"), {m + 1: c for m, c in enumerate(n)}))
    fit = fit_table(t, ModelSpec.all_pairs(3))
    N = {m + 1: c for m, c in enumerate(n)}
    expected = N[7] * N[1] * N[2] * N[4] / (N[3] * N[5] * N[6])
    assert fit.dark_figure == pytest.approx(expected, rel=1e-7)


@pytest.mark.parametrize("name", ["uk6", "ned6", "kosovo", "no8"])
def test_score_equations(name):
    t = zero_fill(builtin(name))
    fit = fit_table(t)
    X = build_design(t, fit.spec).matrix
    assert np.abs(loglik_gradient(X, t.counts, fit.coefficients)).max() < 1e-6


@given(st.lists(st.integers(0, 40), min_size=7, max_size=7),
       st.lists(st.floats(-1.0, 1.0), min_size=7, max_size=7))
def test_gradient_matches_finite_differences(n, beta):
    t = zero_fill(ListSystem(("A", "B", "C"), {m + 1: c for m, c in enumerate(n)}))
    X = build_design(t, ModelSpec.all_pairs(3)).matrix
    beta = np.array(beta)
    g = loglik_gradient(X, t.counts, beta)
    h = 1e-5
    fd = np.array([
        (loglik_at(X, t.counts, beta + h * e) - loglik_at(X, t.counts, beta - h * e)) / (2 * h)
        for e in np.eye(7)
    ])
    scale = np.abs(g).max() + 1.0
    assert np.abs(g - fd).max() / scale < 1e-6


@pytest.mark.parametrize("name,spec", [
    ("uk6", None),
    ("kosovo", None),
    ("uk5", "LA:NG,LA:PFNCA,NG:GO,NG:GP,PFNCA:GP,GO:GP"),
])
def test_profile_endpoints_hit_chi_square(name, spec):
    s = builtin(name)
    t = zero_fill(s)
    spec = ModelSpec.main_effects(s.k) if spec is None else ModelSpec.from_labels(s.list_names, spec)
    cis = profile_ci(t, spec)
    dm = build_design(t, spec)
    prof = ProfileLikelihood(dm.matrix, np.asarray(t.counts, float))
    n = t.total()
    grid = np.linspace(cis[0.95].lower - n, cis[0.95].upper - n, 41)
    lmax = max(prof(d) for d in grid)
    lmax = max(lmax, prof(cis[0.95].point - n))
    for level, iv in cis.items():
        crit = stats.chi2.ppf(level, 1)
        for end in (iv.lower, iv.upper):
            assert abs(2 * (lmax - prof(end - n)) - crit) < 1e-3
        assert iv.lower < iv.point < iv.upper
    assert cis[0.95].lower < cis[0.8].lower and cis[0.8].upper < cis[0.95].upper


def test_profile_upper_unbounded_no8():
    s = builtin("no8")
    spec = ModelSpec.from_labels(s.list_names, "A:D,A:E,A:G,B:F,C:G,D:E,E:H")
    with pytest.warns(RuntimeWarning, match="infinite"):
        cis = profile_ci(zero_fill(s), spec)
    assert cis[0.95].unbounded and math.isinf(cis[0.95].upper)
    assert not cis[0.8].unbounded


def test_information_criteria_conventions():
    t = zero_fill(builtin("kosovo"))
    fit = fit_table(t)
    aic, bic = information_criteria(fit)
    assert aic == pytest.approx(fit.aic)
    assert bic == pytest.approx(-2 * fit.loglik + fit.n_params * math.log(t.total()))
    fit2 = fit_table(t, n_for_bic=15)
    assert fit2.bic == pytest.approx(-2 * fit.loglik + fit.n_params * math.log(15))


def test_lrt_and_wald():
    s = builtin("uk4")
    t = zero_fill(s)
    small = fit_table(t)
    big = fit_table(t, ModelSpec.from_labels(s.list_names, "LA:NG"))
    p = lrt_pvalue(small, big)
    assert 0 <= p < 0.05
    assert math.exp(wald_log_pvalue(big, "LA:NG")) == pytest.approx(wald_pvalue(big, "LA:NG"), rel=1e-9)
    with pytest.raises(ValueError):
        lrt_pvalue(big, small)


def test_wald_pvalue_matches_erfc():
    s = builtin("uk4")
    fit = fit_table(zero_fill(s), ModelSpec.from_labels(s.list_names, "LA:NG"))
    j = fit.col_labels.index("LA:NG")
    z = abs(fit.coefficients[j]) / math.sqrt(fit.covariance[j, j])
    assert wald_pvalue(fit, "LA:NG") == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-10)


def test_diverged_interaction_flagged():
    s = builtin("uk6")
    fit = fit_table(zero_fill(s), ModelSpec.from_labels(s.list_names, "LA:GP"))
    assert fit.diverged == ("LA:GP",)
    assert wald_pvalue(fit, "LA:GP") == 1.0
    assert math.isinf(fit.covariance[-1, -1])


def test_fit_errors():
    with pytest.raises(DataError):
        fit_table(zero_fill(ListSystem(("A", "B"), {})))
    with pytest.raises(FitError):
        fit_table(two_list(3, 4, 5), ModelSpec.all_pairs(2))


@given(counts, counts, counts, st.permutations([0, 1, 2]))
def test_permutation_equivariance_three_lists(a, b, c, perm):
    s = ListSystem(("A", "B", "C"), {1: a, 2: b, 4: c, 3: a // 3 + 1, 6: b // 4 + 1, 7: 1})
    r = s.reorder([s.list_names[i] for i in perm])
    f1 = fit_table(zero_fill(s), ModelSpec.from_labels(s.list_names, "A:B"))
    f2 = fit_table(zero_fill(r), ModelSpec.from_labels(r.list_names, "A:B"))
    assert f1.total_estimate == pytest.approx(f2.total_estimate, rel=1e-8)
    assert f1.aic == pytest.approx(f2.aic, rel=1e-10, abs=1e-8)
