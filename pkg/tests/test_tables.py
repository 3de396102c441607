import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from darkfigure.datasets import NAMES, PUBLISHED_TOTALS, builtin
from darkfigure.exceptions import DataError
from darkfigure.tables import (
    CellTable,
    ListSystem,
    consolidate,
    dumps_csv,
    load_csv,
    loads_csv,
    omit_list,
    save_csv,
    zero_fill,
)


@st.composite
def systems(draw, min_k=2, max_k=5, max_count=50):
    k = draw(st.integers(min_k, max_k))
    names = tuple(f"L{i}" for i in range(k))
    counts = draw(st.dictionaries(st.integers(1, (1 << k) - 1), st.integers(0, max_count), min_size=1))
    return ListSystem(names, counts)


def test_builtin_totals_match_published():
    for name in NAMES:
        assert builtin(name).total_observed() == PUBLISHED_TOTALS[name]


def test_builtin_row_counts():
    assert len(builtin("uk6").counts) == 25
    assert len(builtin("kosovo").counts) == 15
    assert len(zero_fill(builtin("uk6"))) == 63


def test_unknown_builtin():
    with pytest.raises(DataError, match="unknown data set"):
        builtin("nope")


@pytest.mark.parametrize("names", [("A",), ("A", "A"), ("A", "")])
def test_bad_names(names):
    with pytest.raises(DataError):
        ListSystem(names, {1: 1})


def test_bad_counts():
    with pytest.raises(DataError):
        ListSystem(("A", "B"), {1: -1})
    with pytest.raises(DataError):
        ListSystem(("A", "B"), {4: 1})
    with pytest.raises(DataError):
        ListSystem(("A", "B"), {1: 1.5})


def test_zero_counts_dropped_and_immutable():
    s = ListSystem(("A", "B"), {1: 3, 2: 0, 3: 1})
    assert dict(s.counts) == {1: 3, 3: 1}
    with pytest.raises(TypeError):
        s.counts[2] = 5


def test_marginal_and_count():
    s = ListSystem(("A", "B", "C"), {1: 3, 3: 2, 7: 1})
    assert s.marginal("A") == 6
    assert s.marginal("B") == 3
    assert s.count(["A", "B"]) == 2
    assert s.count(["C"]) == 0


def test_csv_roundtrip(tmp_path):
    s = builtin("kosovo")
    p = tmp_path / "k.csv"
    save_csv(s, p)
    assert load_csv(p) == s


@pytest.mark.parametrize("text,msg", [
    ("", "no header"),
    ("A,B,count\n", "no observations"),
    ("A,B,n\n1,0,3\n", "header"),
    ("A,B,count\n1,0\n", "expected 3 fields"),
    ("A,B,count\n1,2,3\n", "0 or 1"),
    ("A,B,count\n0,0,3\n", "no list membership"),
    ("A,B,count\n1,0,x\n", "not an integer"),
    ("A,B,count\n1,0,-1\n", "negative"),
    ("A,B,count\n1,0,1\n1,0,2\n", "duplicate"),
])
def test_csv_errors(text, msg):
    with pytest.raises(DataError, match=msg):
        loads_csv(text)


def test_csv_aggregate():
    s = loads_csv("A,B,count\n1,0,1\n1,0,2\n0,1,4\n", aggregate=True)
    assert dict(s.counts) == {1: 3, 2: 4}


@given(systems())
def test_json_and_csv_roundtrip(s):
    assert ListSystem.from_json(s.to_json()) == s
    if s.counts:
        assert loads_csv(dumps_csv(s)) == s


@given(systems(min_k=3))
def test_omit_preserves_other_marginals(s):
    dropped = s.list_names[1]
    r = omit_list(s, dropped)
    for nm in r.list_names:
        assert r.marginal(nm) == s.marginal(nm)
    only = s.counts.get(1 << 1, 0)
    assert r.total_observed() == s.total_observed() - only


@given(systems(min_k=3))
def test_consolidate_preserves_total(s):
    a, b = s.list_names[0], s.list_names[2]
    r = consolidate(s, [a, b], "AB")
    assert r.total_observed() == s.total_observed()
    assert r.list_names[0] == "AB"
    union = sum(c for m, c in s.counts.items() if m & 0b101)
    assert r.marginal("AB") == union


@given(systems(), st.randoms())
def test_reorder_roundtrip(s, rnd):
    names = list(s.list_names)
    rnd.shuffle(names)
    r = s.reorder(names)
    for nm in names:
        assert r.marginal(nm) == s.marginal(nm)
    assert r.reorder(s.list_names) == s


def test_consolidate_errors():
    s = builtin("uk6")
    with pytest.raises(DataError):
        consolidate(s, ["PF"], "X")
    with pytest.raises(DataError):
        consolidate(s, ["PF", "NCA"], "LA")
    with pytest.raises(DataError):
        consolidate(s, ["PF", "ZZ"], "X")


def test_omit_needs_three_lists():
    with pytest.raises(DataError):
        omit_list(ListSystem(("A", "B"), {1: 1}), "A")


def test_cell_table_sorted_readonly():
    t = CellTable(("A", "B"), np.array([3, 1, 2]), np.array([5.0, 1.0, 2.0]))
    assert list(t.masks) == [1, 2, 3]
    assert list(t.counts) == [1.0, 2.0, 5.0]
    with pytest.raises(ValueError):
        t.counts[0] = 3
    with pytest.raises(DataError):
        CellTable(("A", "B"), np.array([1, 1]), np.array([1.0, 1.0]))


def test_log_factorial_sum():
    t = CellTable(("A", "B"), np.array([1, 2, 3]), np.array([3.0, 0.0, 4.0]))
    assert t.log_factorial_sum() == pytest.approx(np.log(6) + np.log(24))
