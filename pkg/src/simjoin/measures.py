"""Similarity measures decomposed into per-element partial results.

A measure is a set of unilateral partials (computable by scanning one multiset
at a time), a set of conjunctive partials (computable by scanning only the
intersection of two multisets), and a combining function that turns the
aggregated partials into the final similarity. All partials aggregate by
summation, so they can be accumulated in any order, pre-aggregated by
combiners, and - because every built-in per-element function returns an
integer for integer multiplicities - stay exact until the final division.

Disjunctive partials (those needing a scan of the union, such as a symmetric
difference) are rejected at construction: candidate pairs come from inverted
indexes, which only ever see intersections.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

from .errors import UndefinedSimilarityError
from .model import Multiset, UniVector

UNILATERAL = "unilateral"
CONJUNCTIVE = "conjunctive"
SUM = "sum"

ConjVector = tuple


@dataclass(frozen=True)
class PartialSpec:
    """One partial result: a per-element function plus its aggregator.

    Unilateral functions take the element's multiplicity in one multiset;
    conjunctive functions take the pair of multiplicities and must vanish
    whenever either side is absent, so an intersection scan suffices.
    """

    kind: str
    g: Callable
    aggregator: str = SUM

    def __post_init__(self):
        if self.kind == "disjunctive":
            raise ValueError(
                "disjunctive partials are not supported: they need a scan of the "
                "union, which candidate generation from inverted indexes cannot provide"
            )
        if self.kind not in (UNILATERAL, CONJUNCTIVE):
            raise ValueError(f"unknown partial kind {self.kind!r}")
        if self.aggregator != SUM:
            raise ValueError(f"only the {SUM!r} aggregator is implemented, got {self.aggregator!r}")
        if self.kind == CONJUNCTIVE:
            for fi, fj in ((0, 0), (0, 3), (3, 0)):
                if self.g(fi, fj) != 0:
                    raise ValueError("conjunctive partial must be zero outside the intersection")


@dataclass(frozen=True)
class NsmMeasure:
    """A named measure: partial layouts plus the combining function.

    `combine(uni_i, uni_j, conj)` must be commutative in its first two
    arguments; every built-in is.
    """

    name: str
    uni_specs: tuple[PartialSpec, ...]
    conj_specs: tuple[PartialSpec, ...]
    combine: Callable[[UniVector, UniVector, ConjVector], float]

    def __post_init__(self):
        if not self.conj_specs:
            raise ValueError("a measure needs at least one conjunctive partial")
        for spec in self.uni_specs:
            if spec.kind != UNILATERAL:
                raise ValueError("uni_specs must hold unilateral partials")
        for spec in self.conj_specs:
            if spec.kind != CONJUNCTIVE:
                raise ValueError("conj_specs must hold conjunctive partials")

    @property
    def uni_arity(self) -> int:
        return len(self.uni_specs)

    @property
    def conj_arity(self) -> int:
        return len(self.conj_specs)


def uni_addends(measure: NsmMeasure, multiplicity: int) -> tuple:
    """Per-element contributions of one tuple to its multiset's partial sums."""
    return tuple(spec.g(multiplicity) for spec in measure.uni_specs)


def conj_addends(measure: NsmMeasure, f_i: int, f_j: int) -> tuple:
    return tuple(spec.g(f_i, f_j) for spec in measure.conj_specs)


def compute_uni(measure: NsmMeasure, m: Multiset) -> UniVector:
    """Aggregate the unilateral partials in a single pass over the multiset."""
    totals = [0] * len(measure.uni_specs)
    specs = measure.uni_specs
    for f in m.elements.values():
        for i, spec in enumerate(specs):
            totals[i] += spec.g(f)
    return tuple(totals)


def compute_conj(measure: NsmMeasure, mi: Multiset, mj: Multiset) -> ConjVector:
    """Aggregate the conjunctive partials by scanning the intersection only."""
    totals = [0] * len(measure.conj_specs)
    specs = measure.conj_specs
    if len(mi.elements) <= len(mj.elements):
        other = mj.elements
        for e, fi in mi.elements.items():
            fj = other.get(e)
            if fj is not None:
                for k, spec in enumerate(specs):
                    totals[k] += spec.g(fi, fj)
    else:
        other = mi.elements
        for e, fj in mj.elements.items():
            fi = other.get(e)
            if fi is not None:
                for k, spec in enumerate(specs):
                    totals[k] += spec.g(fi, fj)
    return tuple(totals)


def similarity(measure: NsmMeasure, uni_i: UniVector, uni_j: UniVector, conj: ConjVector) -> float:
    if len(uni_i) != measure.uni_arity or len(uni_j) != measure.uni_arity:
        raise ValueError(f"unilateral vector length does not match measure {measure.name!r}")
    if len(conj) != measure.conj_arity:
        raise ValueError(f"conjunctive vector length does not match measure {measure.name!r}")
    return measure.combine(uni_i, uni_j, conj)


def full_similarity(measure: NsmMeasure, mi: Multiset, mj: Multiset) -> float:
    """Direct similarity of two multisets; also the verification kernel."""
    return similarity(
        measure,
        compute_uni(measure, mi),
        compute_uni(measure, mj),
        compute_conj(measure, mi, mj),
    )


def _ratio(num, den, context: str) -> float:
    if den == 0:
        raise UndefinedSimilarityError(context)
    return num / den


def _identity(f):
    return f


def _presence(f):
    return 1 if f > 0 else 0


def _square(f):
    return f * f


def _min_overlap(fi, fj):
    return min(fi, fj)


def _joint_presence(fi, fj):
    return 1 if fi > 0 and fj > 0 else 0


def _product(fi, fj):
    return fi * fj


def _ruzicka_combine(ui, uj, c):
    return _ratio(c[0], ui[0] + uj[0] - c[0], "both multisets are empty")


def _dice_combine(ui, uj, c):
    return _ratio(2 * c[0], ui[0] + uj[0], "both multisets are empty")


def _cosine_combine(ui, uj, c):
    # sqrt of an exact integer product keeps identical inputs at exactly 1.0
    return _ratio(c[0], math.sqrt(ui[0] * uj[0]), "an empty multiset has no cosine")


_UNI_SIZE = (PartialSpec(UNILATERAL, _identity),)
_UNI_SUPPORT = (PartialSpec(UNILATERAL, _presence),)
_UNI_SQUARES = (PartialSpec(UNILATERAL, _square),)
_CONJ_MIN = (PartialSpec(CONJUNCTIVE, _min_overlap),)
_CONJ_PRESENCE = (PartialSpec(CONJUNCTIVE, _joint_presence),)
_CONJ_DOT = (PartialSpec(CONJUNCTIVE, _product),)

#: Built-in measures.
#:
#: ruzicka        sum(min) / (|Mi| + |Mj| - sum(min)), the multiset Jaccard
#: jaccard        Jaccard of the underlying sets (multiplicities clamped to 0/1)
#: dice           2 sum(min) / (|Mi| + |Mj|), via the set expansion of multisets
#: cosine-multiset  sum(min) / sqrt(|Mi| * |Mj|), via the set expansion
#: cosine-vector  dot(f_i, f_j) / (||f_i|| * ||f_j||), the usual vector cosine
MEASURES: dict[str, NsmMeasure] = {
    m.name: m
    for m in (
        NsmMeasure("ruzicka", _UNI_SIZE, _CONJ_MIN, _ruzicka_combine),
        NsmMeasure("jaccard", _UNI_SUPPORT, _CONJ_PRESENCE, _ruzicka_combine),
        NsmMeasure("dice", _UNI_SIZE, _CONJ_MIN, _dice_combine),
        NsmMeasure("cosine-multiset", _UNI_SIZE, _CONJ_MIN, _cosine_combine),
        NsmMeasure("cosine-vector", _UNI_SQUARES, _CONJ_DOT, _cosine_combine),
    )
}

MEASURE_NAMES = tuple(sorted(MEASURES))


def get_measure(name: str) -> NsmMeasure:
    try:
        return MEASURES[name]
    except KeyError:
        raise ValueError(f"unknown measure {name!r}; choose one of {', '.join(MEASURE_NAMES)}") from None
