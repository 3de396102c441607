"""Built-in data sets.

Four published capture-history tables plus the list transforms used to
derive their reduced versions:

========  ==========================================================
uk6       UK potential victims of trafficking, 2013, six lists
uk5       uk6 with PF and NCA merged into PFNCA
uk4       uk5 with GP omitted
ned6      Netherlands identified victims 2010-2015, six lists
ned5      ned6 with I and O merged into IO
no8       Greater New Orleans 2016, eight anonymised lists A-H
no5       no8 with B, E, F and G merged into BEFG
kosovo    Kosovo killings, March-June 1999, four lists
========  ==========================================================
"""

from __future__ import annotations

from .exceptions import DataError
from .tables import ListSystem, consolidate, omit_list

# (space-separated list names, count) for every nonzero cell.
_UK = (
    ("LA", "NG", "PF", "GO", "GP", "NCA"),
    [
        ("LA", 54), ("NG", 463), ("PF", 907), ("GO", 695), ("GP", 316), ("NCA", 57),
        ("LA NG", 15), ("LA PF", 19), ("LA GO", 3), ("NG PF", 56), ("NG GO", 19),
        ("NG GP", 1), ("NG NCA", 3),
        ("PF GO", 69), ("PF GP", 10), ("PF NCA", 31), ("GO GP", 8), ("GO NCA", 6),
        ("GP NCA", 1),
        ("LA NG PF", 1), ("LA NG GO", 1), ("NG PF GO", 4), ("NG PF NCA", 3),
        ("PF GO NCA", 1),
        ("LA NG PF GO", 1),
    ],
)

_NED = (
    ("I", "K", "O", "P", "R", "Z"),
    [
        ("I", 352), ("K", 1299), ("O", 403), ("P", 4466), ("R", 650), ("Z", 632),
        ("I O", 1), ("I P", 18), ("I R", 3), ("I Z", 16), ("K O", 1), ("K P", 44),
        ("K Z", 4), ("O P", 59), ("O R", 2), ("O Z", 57), ("P R", 82), ("P Z", 125),
        ("R Z", 2),
        ("I O P", 4), ("I P Z", 4), ("O P R", 2), ("O P Z", 7), ("P R Z", 1),
    ],
)

_NO = (
    ("A", "B", "C", "D", "E", "F", "G", "H"),
    [
        ("A", 25), ("B", 5), ("C", 70), ("D", 33), ("E", 6), ("F", 6), ("G", 6), ("H", 21),
        ("A C", 1), ("A D", 2), ("A E", 1), ("B F", 1), ("C D", 1), ("C E", 1),
        ("C G", 1), ("D E", 2), ("E H", 1),
        ("A C G", 1), ("A D E", 1),
    ],
)

_KOSOVO = (
    ("EXH", "ABA", "OSCE", "HRW"),
    [
        ("EXH", 1131), ("ABA", 845), ("OSCE", 936), ("HRW", 306),
        ("EXH ABA", 177), ("EXH OSCE", 228), ("EXH HRW", 106), ("ABA OSCE", 217),
        ("ABA HRW", 31), ("OSCE HRW", 123),
        ("EXH ABA OSCE", 181), ("EXH ABA HRW", 18), ("EXH OSCE HRW", 42),
        ("ABA OSCE HRW", 32),
        ("EXH ABA OSCE HRW", 27),
    ],
)

# Published observed totals, used to check the transcriptions above.
PUBLISHED_TOTALS = {
    "uk6": 2744, "uk5": 2744, "uk4": 2428,
    "ned6": 8234, "ned5": 8234,
    "no8": 185, "no5": 185,
    "kosovo": 4400,
}

DESCRIPTIONS = {
    "uk6": "UK potential victims of trafficking 2013, six lists",
    "uk5": "UK, PF and NCA merged (five lists)",
    "uk4": "UK, PF and NCA merged, GP omitted (four lists)",
    "ned6": "Netherlands victims of trafficking 2010-2015, six lists",
    "ned5": "Netherlands, I and O merged (five lists)",
    "no8": "Greater New Orleans 2016, eight lists",
    "no5": "Greater New Orleans, B, E, F, G merged (five lists)",
    "kosovo": "Kosovo killings March-June 1999, four lists",
}


def _build(spec) -> ListSystem:
    names, rows = spec
    counts: dict[int, int] = {}
    for members, c in rows:
        mask = 0
        for nm in members.split():
            mask |= 1 << names.index(nm)
        if mask in counts:
            raise AssertionError(f"duplicate cell {members} in built-in data")
        counts[mask] = c
    return ListSystem(names, counts)


def _derived():
    uk6 = _build(_UK)
    uk5 = consolidate(uk6, ["PF", "NCA"], "PFNCA")
    ned6 = _build(_NED)
    no8 = _build(_NO)
    return {
        "uk6": lambda: uk6,
        "uk5": lambda: uk5,
        "uk4": lambda: omit_list(uk5, "GP"),
        "ned6": lambda: ned6,
        "ned5": lambda: consolidate(ned6, ["I", "O"], "IO"),
        "no8": lambda: no8,
        "no5": lambda: consolidate(no8, ["B", "E", "F", "G"], "BEFG"),
        "kosovo": lambda: _build(_KOSOVO),
    }


_REGISTRY = _derived()

NAMES = tuple(_REGISTRY)


def builtin(name: str) -> ListSystem:
    """Return one of the embedded data sets by short name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise DataError(f"unknown data set {name!r}; choose from {', '.join(NAMES)}") from None
