import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from darkfigure.datasets import NAMES, builtin
from darkfigure.design import (
    ModelSpec,
    build_design,
    check_all_models,
    check_existence,
    check_identifiability,
    zeroed_cells,
)
from darkfigure.exceptions import DataError
from darkfigure.tables import ListSystem, zero_fill


def test_design_columns():
    t = zero_fill(ListSystem(("A", "B", "C"), {1: 1, 2: 1, 4: 1, 7: 1}))
    spec = ModelSpec.from_labels(t.list_names, "A:C")
    dm = build_design(t, spec)
    assert dm.col_labels == ("(Intercept)", "A", "B", "C", "A:C")
    row = dm.matrix[list(t.masks).index(0b101)]
    assert list(row) == [1, 1, 0, 1, 1]
    assert list(dm.interaction_columns()) == [4]


def test_spec_parsing_and_labels():
    names = ("LA", "NG", "PF")
    spec = ModelSpec.from_labels(names, "PF:LA, NG:PF")
    assert spec.labels(names) == ["LA:PF", "NG:PF"]
    assert spec.spec_id(names) == "LA:PF+NG:PF"
    assert ModelSpec.main_effects(3).spec_id(names) == "main"
    with pytest.raises(DataError):
        ModelSpec.from_labels(names, "LA:XX")
    with pytest.raises(DataError):
        ModelSpec.from_labels(names, "LA")
    with pytest.raises(DataError):
        ModelSpec(3, frozenset({(1, 1)}))


def test_spec_k_mismatch():
    t = zero_fill(builtin("kosovo"))
    with pytest.raises(DataError):
        build_design(t, ModelSpec.main_effects(3))


@pytest.mark.parametrize("name", NAMES)
def test_builtin_main_effects_pass(name):
    rep = check_existence(zero_fill(builtin(name)), ModelSpec.main_effects(builtin(name).k))
    assert rep.full_rank and rep.existence_ok


def test_all_models_pass_uk5():
    rep = check_all_models(zero_fill(builtin("uk5")))
    assert rep.full_rank and rep.existence_ok


def test_two_lists_with_interaction_is_rank_deficient():
    t = zero_fill(ListSystem(("A", "B"), {1: 5, 2: 4, 3: 2}))
    rep = check_identifiability(t, ModelSpec.all_pairs(2))
    assert not rep.full_rank
    assert rep.rank == 3 and rep.n_params == 4
    assert len(rep.deficient_columns) == 1
    ex = check_existence(t, ModelSpec.all_pairs(2))
    assert ex.existence_ok is None and ex.status.startswith("moot")


def test_no_overlap_two_lists_diverges():
    t = zero_fill(ListSystem(("A", "B"), {1: 5, 2: 4}))
    rep = check_existence(t, ModelSpec.main_effects(2))
    assert rep.full_rank and rep.existence_ok is False


def test_zeroed_cells_finds_structural_zero():
    # three lists where A and B never overlap: the A:B interaction can be
    # driven to -inf, zeroing both cells that contain A and B
    t = zero_fill(ListSystem(("A", "B", "C"), {1: 5, 2: 4, 4: 6, 5: 2, 6: 3}))
    X = build_design(t, ModelSpec.all_pairs(3)).matrix
    z, msg = zeroed_cells(X, np.asarray(t.counts))
    assert msg == "optimal"
    assert sorted(int(m) for m in t.masks[z]) == [3, 7]
    # five positive-fit cells cannot pin down seven parameters
    rep = check_existence(t, ModelSpec.all_pairs(3))
    assert rep.existence_ok is False and rep.zeroed_cells == 2


def test_extended_mle_with_finite_dark_figure():
    counts = {m: 3 + m for m in range(1, 16) if m & 3 != 3}
    t = zero_fill(ListSystem(("A", "B", "C", "D"), counts))
    rep = check_existence(t, ModelSpec.from_labels(t.list_names, "A:B"))
    assert rep.existence_ok and rep.zeroed_cells == 4
    assert rep.status == "extended MLE exists"


@given(st.lists(st.integers(0, 6), min_size=7, max_size=7))
def test_existence_monotone_under_dropping_pairs(counts):
    s = ListSystem(("A", "B", "C"), {m + 1: c for m, c in enumerate(counts)})
    if s.total_observed() == 0:
        return
    t = zero_fill(s)
    full = check_existence(t, ModelSpec.all_pairs(3))
    if not (full.full_rank and full.existence_ok):
        return
    pairs = list(itertools.combinations(range(3), 2))
    for r in range(len(pairs) + 1):
        for sub in itertools.combinations(pairs, r):
            rep = check_existence(t, ModelSpec(3, frozenset(sub)))
            assert rep.full_rank and rep.existence_ok


def test_report_json():
    rep = check_existence(zero_fill(builtin("kosovo")), ModelSpec.main_effects(4))
    assert '"existence_ok": true' in rep.to_json()
