import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from simjoin import (
    MEASURE_NAMES,
    Multiset,
    NsmMeasure,
    PartialSpec,
    UndefinedSimilarityError,
    compute_conj,
    compute_uni,
    expand_to_set,
    full_similarity,
    get_measure,
    similarity,
)
from helpers import textbook_similarity

M1 = Multiset(b"m1", {b"a": 2, b"b": 1})
M2 = Multiset(b"m2", {b"a": 1, b"b": 3})

small_multisets = st.dictionaries(
    st.sampled_from([b"a", b"b", b"c", b"d", b"e"]), st.integers(1, 9), min_size=1, max_size=5
)


def test_compute_uni_examples():
    ruzicka = get_measure("ruzicka")
    assert compute_uni(ruzicka, M1) == (3,)
    assert compute_uni(ruzicka, Multiset(b"m", {})) == (0,)
    assert compute_uni(get_measure("cosine-multiset"), M1) == (3,)


def test_compute_conj_examples():
    assert compute_conj(get_measure("ruzicka"), M1, M2) == (2,)
    assert compute_conj(get_measure("ruzicka"), M1, Multiset(b"m", {b"z": 1})) == (0,)
    assert compute_conj(
        get_measure("cosine-vector"), Multiset(b"x", {b"a": 2}), Multiset(b"y", {b"a": 3})
    ) == (6,)


def test_similarity_examples():
    ruzicka = get_measure("ruzicka")
    assert similarity(ruzicka, (3,), (4,), (2,)) == pytest.approx(0.4, abs=0)
    assert similarity(get_measure("dice"), (3,), (4,), (2,)) == pytest.approx(4 / 7, abs=1e-15)


def test_similarity_of_multiset_with_itself_is_one():
    for name in MEASURE_NAMES:
        assert full_similarity(get_measure(name), M1, M1) == 1.0


def test_full_similarity_examples():
    assert full_similarity(get_measure("ruzicka"), M1, M2) == pytest.approx(0.4, abs=0)
    assert full_similarity(
        get_measure("jaccard"),
        Multiset(b"x", {b"a": 1, b"b": 1}),
        Multiset(b"y", {b"b": 1, b"c": 1}),
    ) == pytest.approx(1 / 3, abs=1e-15)
    assert full_similarity(get_measure("cosine-multiset"), M1, M2) == pytest.approx(
        2 / math.sqrt(12), abs=1e-15
    )


def test_similarity_validates_vector_lengths():
    with pytest.raises(ValueError):
        similarity(get_measure("ruzicka"), (3, 1), (4,), (2,))
    with pytest.raises(ValueError):
        similarity(get_measure("ruzicka"), (3,), (4,), (2, 2))


def test_undefined_similarity_on_empty_operands():
    empty = Multiset(b"e", {})
    with pytest.raises(UndefinedSimilarityError):
        full_similarity(get_measure("ruzicka"), empty, empty)
    with pytest.raises(UndefinedSimilarityError):
        full_similarity(get_measure("cosine-multiset"), empty, M1)


def test_disjunctive_partials_rejected():
    with pytest.raises(ValueError, match="disjunctive"):
        PartialSpec("disjunctive", lambda fi, fj: abs(fi - fj))


def test_conjunctive_partial_must_vanish_outside_intersection():
    with pytest.raises(ValueError, match="intersection"):
        PartialSpec("conjunctive", lambda fi, fj: fi + fj)


def test_only_sum_aggregators():
    with pytest.raises(ValueError, match="aggregator"):
        PartialSpec("unilateral", lambda f: f, aggregator="max")


def test_measure_requires_conjunctive_partials():
    with pytest.raises(ValueError, match="conjunctive"):
        NsmMeasure("broken", (PartialSpec("unilateral", lambda f: f),), (), lambda a, b, c: 0.0)


@given(small_multisets, small_multisets)
def test_commutativity(ei, ej):
    mi, mj = Multiset(b"i", ei), Multiset(b"j", ej)
    for name in MEASURE_NAMES:
        measure = get_measure(name)
        assert full_similarity(measure, mi, mj) == full_similarity(measure, mj, mi)


@given(small_multisets, small_multisets)
def test_range_and_identity_of_indiscernibles(ei, ej):
    mi, mj = Multiset(b"i", ei), Multiset(b"j", ej)
    for name in MEASURE_NAMES:
        sim = full_similarity(get_measure(name), mi, mj)
        assert 0.0 <= sim <= 1.0
    for name in ("ruzicka", "dice"):
        sim = full_similarity(get_measure(name), mi, mj)
        assert (sim == 1.0) == (ei == ej)
    support_i = {e: 1 for e in ei}
    support_j = {e: 1 for e in ej}
    jaccard_sim = full_similarity(get_measure("jaccard"), mi, mj)
    assert (jaccard_sim == 1.0) == (support_i == support_j)


@given(small_multisets, small_multisets)
def test_disjoint_supports_give_zero(ei, ej):
    mi = Multiset(b"i", {b"l" + e: f for e, f in ei.items()})
    mj = Multiset(b"j", {b"r" + e: f for e, f in ej.items()})
    for name in MEASURE_NAMES:
        assert full_similarity(get_measure(name), mi, mj) == 0.0


@given(small_multisets, small_multisets)
def test_ruzicka_equals_jaccard_on_expanded_sets(ei, ej):
    mi, mj = Multiset(b"i", ei), Multiset(b"j", ej)
    expanded_i = Multiset(b"i", {b"%s#%d" % pair: 1 for pair in expand_to_set(mi)})
    expanded_j = Multiset(b"j", {b"%s#%d" % pair: 1 for pair in expand_to_set(mj)})
    ruzicka = full_similarity(get_measure("ruzicka"), mi, mj)
    jaccard = full_similarity(get_measure("jaccard"), expanded_i, expanded_j)
    assert ruzicka == jaccard


def test_decomposition_matches_textbook_formulas():
    rng = random.Random(7)
    alphabet = [b"e%02d" % k for k in range(10)]
    for trial in range(300):
        name = MEASURE_NAMES[trial % len(MEASURE_NAMES)]
        ei = {e: rng.randint(1, 9) for e in rng.sample(alphabet, rng.randint(1, 6))}
        ej = {e: rng.randint(1, 9) for e in rng.sample(alphabet, rng.randint(1, 6))}
        got = full_similarity(get_measure(name), Multiset(b"i", ei), Multiset(b"j", ej))
        want = textbook_similarity(name, ei, ej)
        assert got == pytest.approx(want, rel=1e-12)
