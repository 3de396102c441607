"""Capture-history tables: list systems, zero-filled cell tables and I/O.

A case observed on lists ``A`` is encoded as a bitmask with bit ``i`` set
when the case is on list ``i``.  A :class:`ListSystem` stores only the
nonzero cells; :func:`zero_fill` turns it into the full table of
``2**K - 1`` observable cells used by the fitting routines.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import DataError

MAX_LISTS = 16


def mask_members(mask: int, k: int) -> list[int]:
    """Indices of the lists contained in ``mask``."""
    return [i for i in range(k) if mask >> i & 1]


@dataclass(frozen=True)
class ListSystem:
    """Named lists plus observed counts for each nonempty combination.

    Parameters
    ----------
    list_names : sequence of str
        Between 2 and 16 distinct, nonempty labels.
    counts : mapping of int to int
        Bitmask of the list combination -> number of cases observed on
        exactly those lists.  Zero entries are dropped.
    """

    list_names: tuple[str, ...]
    counts: Mapping[int, int] = field(repr=False)

    def __post_init__(self):
        names = tuple(self.list_names)
        if not 2 <= len(names) <= MAX_LISTS:
            raise DataError(f"need between 2 and {MAX_LISTS} lists, got {len(names)}")
        for nm in names:
            if not isinstance(nm, str) or not nm:
                raise DataError(f"list names must be nonempty strings, got {nm!r}")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate list names in {names}")
        top = (1 << len(names)) - 1
        clean = {}
        for mask, c in dict(self.counts).items():
            mask = int(mask)
            if not 1 <= mask <= top:
                raise DataError(f"cell {mask} outside 1..{top}")
            if int(c) != c or c < 0:
                raise DataError(f"count for cell {mask} must be a nonnegative integer, got {c}")
            if c:
                clean[mask] = int(c)
        object.__setattr__(self, "list_names", names)
        object.__setattr__(self, "counts", MappingProxyType(dict(sorted(clean.items()))))

    @property
    def k(self) -> int:
        return len(self.list_names)

    def total_observed(self) -> int:
        return sum(self.counts.values())

    @property
    def usable(self) -> bool:
        """True when there is at least one observed case to fit to."""
        return self.total_observed() > 0

    def index(self, name: str) -> int:
        try:
            return self.list_names.index(name)
        except ValueError:
            raise DataError(f"unknown list {name!r}; lists are {list(self.list_names)}") from None

    def count(self, members: Iterable[str]) -> int:
        """Count of cases on exactly the named lists."""
        mask = 0
        for nm in members:
            mask |= 1 << self.index(nm)
        return self.counts.get(mask, 0)

    def cell_names(self, mask: int) -> list[str]:
        return [self.list_names[i] for i in mask_members(mask, self.k)]

    def marginal(self, name: str) -> int:
        """Number of cases appearing on list ``name`` (in any combination)."""
        bit = 1 << self.index(name)
        return sum(c for m, c in self.counts.items() if m & bit)

    def reorder(self, names: Sequence[str]) -> "ListSystem":
        """Same data with the lists permuted into the order ``names``."""
        if sorted(names) != sorted(self.list_names):
            raise DataError(f"{list(names)} is not a permutation of {list(self.list_names)}")
        pos = [self.index(nm) for nm in names]
        out = {}
        for mask, c in self.counts.items():
            new = 0
            for new_i, old_i in enumerate(pos):
                if mask >> old_i & 1:
                    new |= 1 << new_i
            out[new] = c
        return ListSystem(tuple(names), out)

    def rename(self, mapping: Mapping[str, str]) -> "ListSystem":
        return ListSystem(tuple(mapping.get(n, n) for n in self.list_names), self.counts)

    def to_dict(self) -> dict:
        return {
            "lists": list(self.list_names),
            "cells": [{"sets": self.cell_names(m), "count": c} for m, c in self.counts.items()],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ListSystem":
        try:
            names = tuple(obj["lists"])
            cells = obj["cells"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed list-system JSON: {exc}") from None
        counts: dict[int, int] = {}
        for cell in cells:
            mask = 0
            for nm in cell["sets"]:
                if nm not in names:
                    raise DataError(f"cell refers to unknown list {nm!r}")
                mask |= 1 << names.index(nm)
            if mask in counts:
                raise DataError(f"duplicate cell {cell['sets']}")
            counts[mask] = cell["count"]
        return cls(names, counts)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "ListSystem":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CellTable:
    """The observable cells entering a fit, including structural zeros.

    ``masks`` is in ascending order.  Tables produced by removing cells
    (see :func:`darkfigure.bayes.remove_empty_overlaps`) hold a subset of
    the ``2**K - 1`` cells.
    """

    list_names: tuple[str, ...]
    masks: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.int64).copy()
        counts = np.asarray(self.counts, dtype=float).copy()
        if masks.shape != counts.shape or masks.ndim != 1:
            raise DataError("masks and counts must be 1-d arrays of equal length")
        if len(np.unique(masks)) != len(masks):
            raise DataError("cell table rows must be distinct")
        order = np.argsort(masks, kind="stable")
        masks, counts = masks[order], counts[order]
        masks.flags.writeable = False
        counts.flags.writeable = False
        object.__setattr__(self, "list_names", tuple(self.list_names))
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return len(self.list_names)

    def __len__(self) -> int:
        return len(self.masks)

    def total(self) -> float:
        return float(self.counts.sum())

    def membership(self) -> np.ndarray:
        """Boolean ``(rows, K)`` array; entry ``[r, i]`` is list ``i`` in cell ``r``."""
        return (self.masks[:, None] >> np.arange(self.k)) & 1 == 1

    def log_factorial_sum(self) -> float:
        """``sum(log N_A!)``, the constant dropped from the Poisson log-likelihood."""
        return float(gammaln(self.counts + 1.0).sum())

    def drop_cells(self, keep: np.ndarray) -> "CellTable":
        keep = np.asarray(keep, dtype=bool)
        return CellTable(self.list_names, self.masks[keep], self.counts[keep])

    def rows(self) -> list[tuple[int, int]]:
        return [(int(m), int(c)) for m, c in zip(self.masks, self.counts)]


def zero_fill(system: ListSystem) -> CellTable:
    """Reinstate every unobserved combination with a zero count."""
    masks = np.arange(1, 1 << system.k, dtype=np.int64)
    counts = np.array([system.counts.get(int(m), 0) for m in masks], dtype=float)
    return CellTable(system.list_names, masks, counts)


def consolidate(system: ListSystem, group: Iterable[str], new_name: str) -> ListSystem:
    """Merge the lists in ``group`` into a single list called ``new_name``.

    A case is on the merged list when it was on any list of the group.  The
    merged list takes the position of the first group member.
    """
    group = list(dict.fromkeys(group))
    if len(group) < 2:
        raise DataError("consolidation needs at least two lists")
    idx = sorted(system.index(g) for g in group)
    keep = [i for i in range(system.k) if i not in idx]
    new_names = [system.list_names[i] for i in keep]
    if new_name in new_names:
        raise DataError(f"new list name {new_name!r} clashes with an existing list")
    slot = sum(1 for i in keep if i < idx[0])
    new_names.insert(slot, new_name)
    old_to_new = {}
    for pos, i in enumerate(keep):
        old_to_new[i] = pos + (1 if pos >= slot else 0)
    for i in idx:
        old_to_new[i] = slot
    out: dict[int, int] = {}
    for mask, c in system.counts.items():
        new = 0
        for i in mask_members(mask, system.k):
            new |= 1 << old_to_new[i]
        out[new] = out.get(new, 0) + c
    return ListSystem(tuple(new_names), out)


def omit_list(system: ListSystem, name: str) -> ListSystem:
    """Drop list ``name``; cases seen only on that list disappear."""
    drop = system.index(name)
    if system.k < 3:
        raise DataError("omitting a list needs at least three lists")
    low = (1 << drop) - 1
    out: dict[int, int] = {}
    for mask, c in system.counts.items():
        new = (mask & low) | ((mask >> (drop + 1)) << drop)
        if new:
            out[new] = out.get(new, 0) + c
    names = system.list_names[:drop] + system.list_names[drop + 1:]
    return ListSystem(names, out)


def _parse_rows(reader, aggregate: bool) -> ListSystem:
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: no header") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[-1].lower() != "count":
        raise DataError("header must list the K list labels followed by 'count'")
    names = tuple(header[:-1])
    k = len(names)
    counts: dict[int, int] = {}
    n_rows = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not x.strip() for x in row):
            continue
        if len(row) != k + 1:
            raise DataError(f"line {lineno}: expected {k + 1} fields, got {len(row)}")
        mask = 0
        for i, v in enumerate(row[:-1]):
            v = v.strip()
            if v not in ("0", "1"):
                raise DataError(f"line {lineno}: membership must be 0 or 1, got {v!r}")
            if v == "1":
                mask |= 1 << i
        if mask == 0:
            raise DataError(f"line {lineno}: row has no list membership")
        try:
            c = int(row[-1].strip())
        except ValueError:
            raise DataError(f"line {lineno}: count {row[-1]!r} is not an integer") from None
        if c < 0:
            raise DataError(f"line {lineno}: negative count {c}")
        if mask in counts and not aggregate:
            raise DataError(f"line {lineno}: duplicate combination (use aggregate=True to sum)")
        counts[mask] = counts.get(mask, 0) + c
        n_rows += 1
    if n_rows == 0:
        raise DataError("no observations")
    return ListSystem(names, counts)


def load_csv(path, aggregate: bool = False) -> ListSystem:
    """Read a capture-history CSV.

    The header holds the K list labels followed by ``count``; each body row
    has K entries in {0, 1} and a nonnegative integer count.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_rows(csv.reader(fh), aggregate)


def loads_csv(text: str, aggregate: bool = False) -> ListSystem:
    return _parse_rows(csv.reader(io.StringIO(text)), aggregate)


def dumps_csv(system: ListSystem) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(system.list_names) + ["count"])
    for mask, c in system.counts.items():
        w.writerow([mask >> i & 1 for i in range(system.k)] + [c])
    return buf.getvalue()


def save_csv(system: ListSystem, path) -> None:
    Path(path).write_text(dumps_csv(system), encoding="utf-8")
