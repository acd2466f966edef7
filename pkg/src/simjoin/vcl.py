"""Prefix-filtering baseline: replicate multisets under their prefix elements.

Elements are ranked ascending by how many multisets contain them (rare first,
ties broken bytewise). Each multiset is expanded to set form, its expansion is
sorted by that rank, and only a prefix - long enough that any pair at or above
the threshold must share a prefix element - is indexed. The kernel stage ships
the whole multiset under each of its prefix elements, so a pair sharing k
prefix elements is compared k times; a post-processing stage deduplicates and
applies the threshold. Exact for measures where the expanded-set overlap bound
applies (ruzicka, and jaccard via the underlying sets).

Whole multisets travel as indivisible records, so every multiset, and the
element order itself, has to fit the per-worker memory budget; ``hash_order``
sidesteps the element-order table by ranking elements by a stable hash, at the
cost of indexing more frequent elements early.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from fractions import Fraction

from .errors import PreconditionRefused
from .kernel import (
    KernelConfig,
    KvRecord,
    StageMetrics,
    StageSpec,
    fingerprint64,
    load_side_data,
    run_stage,
)
from .measures import NsmMeasure, compute_conj, compute_uni, similarity
from .model import ElementId, Multiset, RawTuple, SimilarPair, canonical_pair
from .wire import decode_number, encode_number, pack_fields, unpack_fields

#: Measures whose qualifying pairs are safely bounded by expanded-set prefixes.
VCL_MEASURES = ("ruzicka", "jaccard")


@dataclass(frozen=True)
class FrequencyOrder:
    """Total order over the alphabet, ascending by (frequency, element)."""

    rank: Mapping[ElementId, int]


@dataclass(frozen=True)
class PrefixScheme:
    """Maps an expanded multiset size to its indexed prefix length.

    The default bound keeps `size - ceil(threshold * size) + 1` elements: a
    pair whose expanded overlap meets the threshold cannot hide entirely in
    the suffixes. The threshold is rationalized from its decimal form so the
    ceiling never suffers float round-off.
    """

    threshold: float
    size_fn: Callable[[int], int] | None = None

    def prefix_length(self, expanded_size: int) -> int:
        if expanded_size < 1:
            return 0
        if self.size_fn is not None:
            p = self.size_fn(expanded_size)
        else:
            t = Fraction(str(self.threshold))
            p = expanded_size - math.ceil(t * expanded_size) + 1
        return max(1, min(p, expanded_size))


def build_frequency_order(
    raw: Iterable[RawTuple],
    config: KernelConfig | None = None,
    by_hash: bool = False,
) -> tuple[FrequencyOrder, StageMetrics]:
    """Count multisets per element, then rank ascending by (count, element).

    Input tuples must be merged per (id, element). With ``by_hash`` the rank
    ignores frequencies and orders by a stable hash of the element instead.
    """

    def map_fn(t: RawTuple):
        return [KvRecord(t.element, None, b"1")]

    def combine_fn(key, values):
        return [b"%d" % sum(int(v) for v in values)]

    def reduce_fn(group):
        return [(group.key, sum(int(v) for _sec, v in group.values()))]

    spec = StageSpec("element-frequencies", map_fn, reduce_fn, combine_fn=combine_fn)
    entries, metrics = run_stage(spec, raw, config)
    freq = dict(entries)
    if by_hash:
        ordered = sorted(freq, key=lambda e: (fingerprint64(e), e))
    else:
        ordered = sorted(freq, key=lambda e: (freq[e], e))
    return FrequencyOrder({e: i for i, e in enumerate(ordered)}), metrics


def expansion_view(measure: NsmMeasure, m: Multiset) -> Multiset:
    """The multiset whose set expansion drives prefixes for this measure."""
    if measure.name == "jaccard":
        return Multiset(m.id, {e: 1 for e in m.elements})
    return m


def prefix_of(
    m: Multiset,
    order: FrequencyOrder,
    scheme: PrefixScheme,
) -> list[tuple[ElementId, int]]:
    """The indexed prefix of a multiset's expansion; empty for empty input."""
    expanded = [(e, j) for e, f in m.elements.items() for j in range(1, f + 1)]
    if not expanded:
        return []
    rank = order.rank
    expanded.sort(key=lambda ej: (rank[ej[0]], ej[1]))
    return expanded[: scheme.prefix_length(len(expanded))]


@dataclass
class VclResult:
    pairs: list[SimilarPair]
    metrics: list[StageMetrics]
    #: (left, right) -> number of times the pair's similarity was computed
    compared_counts: Counter
    kernel_bytes_shuffled: int
    kernel_replicated_records: int


def _multiset_bytes(m: Multiset) -> bytes:
    parts: list[bytes] = [m.id]
    for e, f in sorted(m.elements.items()):
        parts.append(e)
        parts.append(encode_number(f))
    return pack_fields(*parts)


def _multiset_from_bytes(buf: bytes) -> Multiset:
    parts = unpack_fields(buf)
    elements = {parts[i]: int(parts[i + 1]) for i in range(1, len(parts), 2)}
    return Multiset(parts[0], elements)


def vcl_join(
    raw: Iterable[RawTuple],
    measure: NsmMeasure,
    threshold: float,
    config: KernelConfig | None = None,
    hash_order: bool = False,
) -> VclResult:
    if measure.name not in VCL_MEASURES:
        raise PreconditionRefused(
            f"vcl supports {', '.join(VCL_MEASURES)}; the prefix bound does not "
            f"cover {measure.name!r}"
        )
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    config = config or KernelConfig()
    raw = raw if isinstance(raw, list) else list(raw)
    metrics: list[StageMetrics] = []

    if hash_order:
        def rank_key(element: bytes) -> tuple:
            return (fingerprint64(element), element)
    else:
        order, m0 = build_frequency_order(raw, config)
        metrics.append(m0)
        # the whole element order must fit each mapper's memory budget
        side = load_side_data(
            {e: b"%d" % r for e, r in order.rank.items()}, config
        )

        def rank_key(element: bytes) -> tuple:
            return (int(side[element]),)

    def assemble_map(t: RawTuple):
        return [KvRecord(t.id, None, pack_fields(t.element, encode_number(t.multiplicity)))]

    def assemble_reduce(group):
        values = group.require_in_memory(config.memory_budget, what=f"multiset {group.key!r}")
        elements = {}
        for _sec, value in values:
            e, mult_b = unpack_fields(value)
            elements[e] = int(mult_b)
        return [Multiset(group.key, elements)]

    multisets, m1 = run_stage(StageSpec("vcl-assemble", assemble_map, assemble_reduce), raw, config)
    metrics.append(m1)

    scheme = PrefixScheme(threshold)

    def kernel_map(m: Multiset):
        view = expansion_view(measure, m)
        expanded = [(e, j) for e, f in view.elements.items() for j in range(1, f + 1)]
        expanded.sort(key=lambda ej: (rank_key(ej[0]), ej[1]))
        payload = _multiset_bytes(m)
        p = scheme.prefix_length(len(expanded))
        return [
            KvRecord(pack_fields(e, encode_number(j)), None, payload)
            for e, j in expanded[:p]
        ]

    def kernel_reduce(group):
        values = group.require_in_memory(
            config.memory_budget, what=f"prefix index entry {group.key!r}"
        )
        entries = [_multiset_from_bytes(value) for _sec, value in values]
        unis = [compute_uni(measure, m) for m in entries]
        out = []
        n = len(entries)
        for i in range(n):
            for j in range(i + 1, n):
                sim = similarity(
                    measure, unis[i], unis[j], compute_conj(measure, entries[i], entries[j])
                )
                left, right = canonical_pair(entries[i].id, entries[j].id)
                out.append((pack_fields(left, right), encode_number(sim)))
        return out

    compared, m2 = run_stage(StageSpec("vcl-kernel", kernel_map, kernel_reduce), multisets, config)
    metrics.append(m2)

    def dedup_map(record):
        key, sim_b = record
        return [KvRecord(key, None, sim_b)]

    def dedup_reduce(group):
        count = 0
        sim_b = None
        for _sec, value in group.values():
            count += 1
            if sim_b is None:
                sim_b = value
        left, right = unpack_fields(group.key)
        return [(left, right, float(decode_number(sim_b)), count)]

    deduped, m3 = run_stage(StageSpec("vcl-dedup", dedup_map, dedup_reduce), compared, config)
    metrics.append(m3)

    pairs = sorted(
        (SimilarPair(left, right, sim) for left, right, sim, _count in deduped if sim >= threshold),
        key=lambda p: (p.left, p.right),
    )
    compared_counts = Counter({(left, right): count for left, right, _sim, count in deduped})
    return VclResult(pairs, metrics, compared_counts, m2.bytes_shuffled, m2.records_mapped)


def vcl_redundancy_report(result: VclResult) -> dict:
    """Summary of duplicated work in an instrumented prefix-filter run."""
    histogram = Counter(result.compared_counts.values())
    return {
        "schema": "simjoin-metrics/1",
        "record": "vcl-redundancy",
        "total_pair_computations": sum(result.compared_counts.values()),
        "distinct_pairs_compared": len(result.compared_counts),
        "redundancy_histogram": {str(k): v for k, v in sorted(histogram.items())},
        "kernel_bytes_shuffled": result.kernel_bytes_shuffled,
        "kernel_replicated_records": result.kernel_replicated_records,
        "emitted_pairs": len(result.pairs),
    }
