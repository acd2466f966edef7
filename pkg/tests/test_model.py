import pytest
from hypothesis import given
from hypothesis import strategies as st

from simjoin import (
    Multiset,
    ParseError,
    RawTuple,
    SelfPairError,
    SimilarPair,
    canonical_pair,
    expand_to_set,
    ingest_raw,
    pairs_to_tsv_bytes,
)

ids = st.binary(min_size=1, max_size=6)


def test_canonical_pair_orders_bytewise():
    assert canonical_pair(b"ip9", b"ip2") == (b"ip2", b"ip9")
    assert canonical_pair(b"ip2", b"ip9") == (b"ip2", b"ip9")


def test_canonical_pair_rejects_self():
    with pytest.raises(SelfPairError):
        canonical_pair(b"x", b"x")


@given(ids, ids)
def test_canonical_pair_commutative(a, b):
    if a == b:
        return
    assert canonical_pair(a, b) == canonical_pair(b, a)


def test_ingest_single_line():
    assert ingest_raw([b"m1\ta\t2"]) == [RawTuple(b"m1", b"a", 2)]


def test_ingest_merges_duplicates_by_summing():
    assert ingest_raw([b"m1\ta\t2", b"m1\ta\t3"]) == [RawTuple(b"m1", b"a", 5)]


def test_ingest_rejects_non_positive_multiplicity():
    with pytest.raises(ParseError, match="line 1"):
        ingest_raw([b"m1\ta\t0"])
    with pytest.raises(ParseError):
        ingest_raw([b"m1\ta\t-2"])


def test_ingest_rejects_malformed_lines():
    with pytest.raises(ParseError, match="line 2"):
        ingest_raw([b"m1\ta\t1", b"m1\ta"])
    with pytest.raises(ParseError, match="not an integer"):
        ingest_raw([b"m1\ta\tx"])
    with pytest.raises(ParseError, match="empty"):
        ingest_raw([b"\ta\t1"])


def test_ingest_accepts_str_and_skips_blank_lines():
    assert ingest_raw(["m1\ta\t1", "", "m2\tb\t2\n"]) == [
        RawTuple(b"m1", b"a", 1),
        RawTuple(b"m2", b"b", 2),
    ]


@given(
    st.lists(
        st.tuples(st.sampled_from([b"m1", b"m2"]), st.sampled_from([b"a", b"b"]),
                  st.integers(1, 9)),
        max_size=12,
    ),
    st.randoms(),
)
def test_ingest_is_order_insensitive(entries, rng):
    lines = [b"%s\t%s\t%d" % e for e in entries]
    shuffled = list(lines)
    rng.shuffle(shuffled)
    assert ingest_raw(lines) == ingest_raw(shuffled)


def test_expand_to_set_examples():
    assert expand_to_set(Multiset(b"m", {b"a": 2, b"b": 1})) == {
        (b"a", 1), (b"a", 2), (b"b", 1)
    }
    assert expand_to_set(Multiset(b"m", {})) == set()
    assert expand_to_set(Multiset(b"m", {b"a": 1})) == {(b"a", 1)}


@given(st.dictionaries(st.binary(min_size=1, max_size=3), st.integers(1, 9), max_size=6))
def test_expansion_size_equals_cardinality(elements):
    m = Multiset(b"m", elements)
    assert len(expand_to_set(m)) == m.cardinality()


def test_multiset_cardinalities():
    m = Multiset(b"m", {b"a": 2, b"b": 1})
    assert m.cardinality() == 3
    assert m.underlying_cardinality() == 2


def test_multiset_rejects_zero_multiplicity():
    with pytest.raises(ValueError):
        Multiset(b"m", {b"a": 0})


def test_similar_pair_requires_canonical_order():
    with pytest.raises(ValueError):
        SimilarPair(b"m2", b"m1", 0.5)


def test_pairs_tsv_formatting_and_sorting():
    rows = pairs_to_tsv_bytes(
        [SimilarPair(b"b", b"c", 0.5), SimilarPair(b"a", b"z", 1 / 3)]
    )
    assert rows == b"a\tz\t0.333333333\nb\tc\t0.500000000\n"
