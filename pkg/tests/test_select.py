import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from darkfigure.datasets import builtin
from darkfigure.design import ModelSpec
from darkfigure.exceptions import DataError
from darkfigure.poisfit import fit_table
from darkfigure.select import (
    all_specs,
    default_threads,
    exhaustive_search,
    export_scatter,
    scatter_csv,
    scatter_json,
    stepwise_aic,
)
from darkfigure.tables import ListSystem, zero_fill

three_lists = st.lists(st.integers(1, 300), min_size=7, max_size=7).map(
    lambda n: ListSystem(("A", "B", "C"), {m + 1: c for m, c in enumerate(n)}))


@settings(max_examples=15)
@given(three_lists)
def test_exhaustive_matches_brute_force(s):
    t = zero_fill(s)
    res = exhaustive_search(t, threads=1)
    assert len(res) == 8
    brute = {}
    for r in range(4):
        for sub in itertools.combinations(itertools.combinations(range(3), 2), r):
            spec = ModelSpec(3, frozenset(sub))
            if spec == ModelSpec.all_pairs(3):
                continue
            brute[spec] = fit_table(t, spec)
    for spec, f in brute.items():
        e = res.find(spec)
        assert e.bic == pytest.approx(f.bic, rel=1e-9)
        assert e.total_estimate == pytest.approx(f.total_estimate, rel=1e-8)
    best = min(brute, key=lambda sp: brute[sp].bic)
    eligible = res.top(1, "bic")[0]
    if eligible.spec != ModelSpec.all_pairs(3):
        assert brute[eligible.spec].bic <= brute[best].bic + 1e-9


def test_search_sorted_by_bic():
    res = exhaustive_search(zero_fill(builtin("kosovo")), threads=1)
    assert len(res) == 64
    bics = [e.bic for e in res.entries if e.fitted]
    assert bics == sorted(bics)


def test_search_thread_count_irrelevant():
    t = zero_fill(builtin("kosovo"))
    a = exhaustive_search(t, threads=1)
    b = exhaustive_search(t, threads=3)
    assert a.to_dict() == b.to_dict()


def test_search_list_limit():
    with pytest.raises(DataError, match="consolidate"):
        exhaustive_search(zero_fill(builtin("uk6")))


def test_all_specs_count():
    assert len(all_specs(4)) == 64
    assert len(set(all_specs(4))) == 64


def test_scatter_export():
    res = exhaustive_search(zero_fill(builtin("kosovo")), threads=1)
    rows = export_scatter(res)
    assert len(rows) == sum(e.fitted for e in res.entries)
    assert sum(r["best_bic"] for r in rows) == 1
    assert all(r["neg_bic"] == -e.bic for r, e in zip(rows, res.entries))
    fenced = export_scatter(res, omit_outliers=True)
    assert max(r["total_estimate"] for r in fenced) <= res.outlier_fence()
    assert scatter_csv(rows).splitlines()[0] == "neg_bic,total_estimate,spec_id,diverged,existence_ok,best_bic"
    assert scatter_json(rows).startswith("[{")


def test_threads_env(monkeypatch):
    monkeypatch.setenv("DARKFIGURE_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("DARKFIGURE_THREADS", "junk")
    assert default_threads() >= 1


@pytest.mark.parametrize("name", ["uk6", "uk5", "uk4", "ned6", "kosovo", "no8"])
def test_stepwise_aic_strictly_decreasing(name):
    res = stepwise_aic(zero_fill(builtin(name)))
    main = fit_table(zero_fill(builtin(name)))
    aics = [main.aic] + [s.aic for s in res.trace if s.accepted]
    assert all(a > b for a, b in zip(aics, aics[1:]))
    assert res.fit.aic == aics[-1]


@pytest.mark.parametrize("name", ["uk6", "kosovo", "ned6"])
def test_tiny_p_gives_main_effects(name):
    res = stepwise_aic(zero_fill(builtin(name)), p_threshold=1e-300)
    assert res.spec == ModelSpec.main_effects(builtin(name).k)


def test_stepwise_lrt_variant_runs():
    res = stepwise_aic(zero_fill(builtin("uk4")), test="lrt")
    assert "LA:NG" in res.spec.labels(builtin("uk4").list_names)
    with pytest.raises(ValueError):
        stepwise_aic(zero_fill(builtin("uk4")), test="bogus")
    with pytest.raises(ValueError):
        stepwise_aic(zero_fill(builtin("uk4")), p_threshold=0)


@pytest.mark.parametrize("name", ["uk5", "kosovo"])
def test_stepwise_permutation_equivariant(name):
    s = builtin(name)
    r = s.reorder(list(reversed(s.list_names)))
    a = stepwise_aic(zero_fill(s))
    b = stepwise_aic(zero_fill(r))
    norm = lambda labels: {frozenset(x.split(":")) for x in labels}
    assert norm(a.spec.labels(s.list_names)) == norm(b.spec.labels(r.list_names))
    assert a.fit.total_estimate == pytest.approx(b.fit.total_estimate, rel=1e-8)


def test_search_permutation_equivariant():
    s = builtin("kosovo")
    r = s.reorder(list(reversed(s.list_names)))
    a = exhaustive_search(zero_fill(s), threads=1)
    b = exhaustive_search(zero_fill(r), threads=1)
    ea, eb = a.entries[a.best_bic], b.entries[b.best_bic]
    assert ea.total_estimate == pytest.approx(eb.total_estimate, rel=1e-8)
    assert math.isclose(ea.bic, eb.bic, rel_tol=1e-10)
