"""Core domain types: multisets, tuple records, and pair results.

Ids and elements are opaque byte strings ordered bytewise; that order is also
the canonical order of output rows. All types are immutable values, safe to
share read-only across workers.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from .errors import ParseError, SelfPairError

ElementId = bytes
MultisetId = bytes

# Fixed-length vector of unilateral partial results; integer entries stay
# integers so accumulation is exact.
UniVector = tuple


@dataclass(frozen=True)
class RawTuple:
    id: MultisetId
    element: ElementId
    multiplicity: int

    def __post_init__(self):
        if self.multiplicity <= 0:
            raise ValueError(f"multiplicity must be positive, got {self.multiplicity}")


@dataclass(frozen=True)
class Multiset:
    """Sparse element -> multiplicity map; zero entries are never stored."""

    id: MultisetId
    elements: Mapping[ElementId, int]

    def __post_init__(self):
        for f in self.elements.values():
            if f <= 0:
                raise ValueError(f"multiset {self.id!r} stores a non-positive multiplicity")

    def cardinality(self) -> int:
        return sum(self.elements.values())

    def underlying_cardinality(self) -> int:
        return len(self.elements)


@dataclass(frozen=True)
class JoinedTuple:
    """One element tuple with its multiset's unilateral partials attached."""

    id: MultisetId
    uni: UniVector
    element: ElementId
    multiplicity: int

    def __post_init__(self):
        if self.multiplicity <= 0:
            raise ValueError(f"multiplicity must be positive, got {self.multiplicity}")


@dataclass(frozen=True)
class SimilarPair:
    left: MultisetId
    right: MultisetId
    similarity: float

    def __post_init__(self):
        if not self.left < self.right:
            raise ValueError(f"pair ({self.left!r}, {self.right!r}) is not in canonical order")


def canonical_pair(a: MultisetId, b: MultisetId) -> tuple[MultisetId, MultisetId]:
    """Order two distinct ids bytewise; the dedup convention for pairs."""
    if a == b:
        raise SelfPairError(f"cannot pair id {a!r} with itself")
    return (a, b) if a < b else (b, a)


def ingest_raw(lines: Iterable[bytes | str]) -> list[RawTuple]:
    """Parse `id TAB element TAB multiplicity` lines into merged raw tuples.

    Duplicate (id, element) lines sum their multiplicities. Blank lines are
    skipped; anything else malformed raises ParseError with its line number.
    """
    merged: dict[tuple[bytes, bytes], int] = {}
    for line_no, line in enumerate(lines, start=1):
        if isinstance(line, str):
            line = line.encode("utf-8")
        line = line.rstrip(b"\r\n")
        if not line:
            continue
        parts = line.split(b"\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line_no)
        mid, element, mult_b = parts
        if not mid or not element:
            raise ParseError("empty multiset id or element", line_no)
        try:
            mult = int(mult_b)
        except ValueError:
            raise ParseError(f"multiplicity {mult_b!r} is not an integer", line_no) from None
        if mult <= 0:
            raise ParseError(f"non-positive multiplicity {mult}", line_no)
        key = (mid, element)
        merged[key] = merged.get(key, 0) + mult
    return [RawTuple(mid, element, mult) for (mid, element), mult in sorted(merged.items())]


def read_raw_tsv(path: str) -> list[RawTuple]:
    with open(path, "rb") as f:
        return ingest_raw(f)


def tuples_to_tsv_bytes(tuples: Iterable[RawTuple]) -> bytes:
    return b"".join(b"%s\t%s\t%d\n" % (t.id, t.element, t.multiplicity) for t in tuples)


def assemble_multisets(raw: Iterable[RawTuple]) -> dict[MultisetId, Multiset]:
    """Group raw tuples into multisets, summing any residual duplicates."""
    grouped: dict[bytes, dict[bytes, int]] = {}
    for t in raw:
        elems = grouped.setdefault(t.id, {})
        elems[t.element] = elems.get(t.element, 0) + t.multiplicity
    return {mid: Multiset(mid, elems) for mid, elems in grouped.items()}


def expand_to_set(m: Multiset) -> set[tuple[ElementId, int]]:
    """Set form of a multiset: each element repeated as (element, ordinal)."""
    return {(e, j) for e, f in m.elements.items() for j in range(1, f + 1)}


def sort_pairs(pairs: Iterable[SimilarPair]) -> list[SimilarPair]:
    return sorted(pairs, key=lambda p: (p.left, p.right))


def pairs_to_tsv_bytes(pairs: Iterable[SimilarPair]) -> bytes:
    """Output rows: `left TAB right TAB similarity`, nine fractional digits."""
    return b"".join(
        b"%s\t%s\t%s\n" % (p.left, p.right, b"%.9f" % p.similarity)
        for p in sort_pairs(pairs)
    )


def write_pairs_tsv(path: str, pairs: Iterable[SimilarPair]) -> None:
    with open(path, "wb") as f:
        f.write(pairs_to_tsv_bytes(pairs))
