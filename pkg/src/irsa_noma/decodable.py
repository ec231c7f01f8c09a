"""Intra-slot SIC decodability.

A transmission pattern ``c`` counts the unresolved packets of each type in a
slot. Types are 1-indexed and ordered by NOMA decoding order (type 1 first).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence


def is_type_decodable(c: Sequence[int], t: int) -> bool:
    """True iff a type-``t`` packet can be recovered from pattern ``c``.

    Requires exactly one type-t packet, at most one packet of every
    earlier-decoded type, ``c[s] <= s - t`` for every later type ``s`` and at
    most ``T - t`` later-type packets overall.
    """
    T = len(c)
    if not 1 <= t <= T:
        raise IndexError(f"type {t} outside [1, {T}]")
    if c[t - 1] != 1:
        return False
    for s in range(1, t):
        if c[s - 1] > 1:
            return False
    later = 0
    for s in range(t + 1, T + 1):
        if c[s - 1] > s - t:
            return False
        later += c[s - 1]
    return later <= T - t


def decodable_types(c: Sequence[int]) -> set[int]:
    return {t for t in range(1, len(c) + 1) if is_type_decodable(c, t)}


@dataclass(frozen=True)
class DecodableSet:
    t: int
    T: int
    patterns: tuple[tuple[int, ...], ...]

    def __contains__(self, c) -> bool:
        return tuple(c) in self.patterns

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)


@lru_cache(maxsize=None)
def enumerate_decodable_set(t: int, T: int) -> DecodableSet:
    """All type-``t`` decodable patterns for ``T`` types, in lexicographic order.

    Each coordinate is bounded by the definition itself: earlier types by 1,
    type t exactly 1, a later type s by ``s - t``.
    """
    if not 1 <= t <= T:
        raise IndexError(f"type {t} outside [1, {T}]")
    ranges = []
    for s in range(1, T + 1):
        if s < t:
            ranges.append(range(2))
        elif s == t:
            ranges.append(range(1, 2))
        else:
            ranges.append(range(s - t + 1))
    pats = tuple(c for c in itertools.product(*ranges) if is_type_decodable(c, t))
    return DecodableSet(t, T, pats)


def all_decodable_sets(T: int) -> list[DecodableSet]:
    return [enumerate_decodable_set(t, T) for t in range(1, T + 1)]


@lru_cache(maxsize=None)
def decodable_lookup(T: int) -> dict[tuple[int, ...], tuple[int, ...]]:
    """Map every decodable pattern to the types it decodes.

    Patterns absent from the map decode nothing; the peeling decoders use this
    as a constant-time table.
    """
    table: dict[tuple[int, ...], set[int]] = {}
    for ds in all_decodable_sets(T):
        for c in ds:
            table.setdefault(c, set()).add(ds.t)
    return {c: tuple(sorted(ts)) for c, ts in table.items()}
