"""Brute-force all-pairs verifier: evaluates every pair directly."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

from .errors import PreconditionRefused
from .measures import NsmMeasure, compute_conj, compute_uni, similarity
from .model import Multiset, SimilarPair

#: Quadratic-scan guard; larger inputs must be forced deliberately.
PAIR_GUARD = 5000


def oracle_join(
    multisets: Mapping[bytes, Multiset] | Iterable[Multiset],
    measure: NsmMeasure,
    threshold: float,
    force: bool = False,
) -> list[SimilarPair]:
    """All pairs at or above threshold, by exhaustive pairwise evaluation.

    Shares no pipeline machinery: it scans plain multisets with the measure's
    direct operations, so it can stand as the ground truth for the engines.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if isinstance(multisets, Mapping):
        multisets = multisets.values()
    items = sorted(multisets, key=lambda m: m.id)
    if len(items) > PAIR_GUARD and not force:
        raise PreconditionRefused(
            f"{len(items)} multisets exceeds the brute-force guard of {PAIR_GUARD} "
            "(quadratic scan); pass force=True / --force-oracle to insist"
        )
    unis = [compute_uni(measure, m) for m in items]
    out: list[SimilarPair] = []
    n = len(items)
    for i in range(n):
        mi = items[i]
        ui = unis[i]
        for j in range(i + 1, n):
            sim = similarity(measure, ui, unis[j], compute_conj(measure, mi, items[j]))
            if sim >= threshold:
                out.append(SimilarPair(mi.id, items[j].id, sim))
    return out
