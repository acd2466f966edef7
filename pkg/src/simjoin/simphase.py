"""Similarity phase: inverted index, candidate pairs, and pair aggregation.

The first stage re-keys joined tuples by element, which groups every multiset
containing that element together with its unilateral partials (an inverted
index), and emits exactly one contribution per unordered pair of multisets
sharing the element. An index entry that outgrows its byte budget is dissected
into bounded chunks instead; the chunk pairs are flagged and their pairwise
expansion is deferred to the next stage's mappers, so no reducer ever buffers
more than one chunk of group data. The second stage sums conjunctive partial
vectors per pair (pre-aggregated by combiners) and applies the combining
function and the threshold.

Pair canonicalization happens at emission: each unordered pair yields exactly
one contribution per shared element, in both the plain and the chunked path.
Emitting both orientations would double the conjunctive sums downstream.
"""

from __future__ import annotations

import threading
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

from .errors import MemoryBudgetExceeded, UndefinedSimilarityError
from .kernel import KernelConfig, KvRecord, StageMetrics, StageSpec, run_stage
from .measures import NsmMeasure, conj_addends, similarity
from .model import ElementId, JoinedTuple, MultisetId, RawTuple, SimilarPair
from .wire import (
    decode_numbers,
    encode_number,
    encode_numbers,
    pack_fields,
    sum_number_vectors,
    unpack_fields,
)

PAIR_RECORD = "pair"
CHUNK_RECORD = "chunk-pair"


@dataclass(frozen=True)
class PairKey:
    """Shuffle key of the aggregation stage: a canonical pair plus partials."""

    left: MultisetId
    right: MultisetId
    uni_left: tuple
    uni_right: tuple

    def __post_init__(self):
        if not self.left < self.right:
            raise ValueError("pair key is not in canonical order")


@dataclass(frozen=True)
class Contribution:
    """One shared element's multiplicities, oriented like its pair key."""

    f_left: int
    f_right: int

    def __post_init__(self):
        if self.f_left <= 0 or self.f_right <= 0:
            raise ValueError("contributions only exist for shared elements")


@dataclass(frozen=True)
class ChunkPlan:
    """How one oversized index entry was dissected."""

    chunk_count: int
    chunk_byte_budget: int

    def __post_init__(self):
        if self.chunk_count < 2:
            raise ValueError("a chunk plan needs at least 2 chunks")
        if self.chunk_byte_budget < 1:
            raise ValueError("chunk_byte_budget must be positive")


class ChunkRecorder:
    """Observational telemetry for the chunked path (thread-safe).

    ``max_buffer_bytes`` tracks the group data a reducer retains for pairing,
    which is at most one chunk: the partner chunk of a cross pair streams
    straight into the output record under construction, so the reducer's
    working set stays at one chunk (and one in-flight record of two).
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.chunk_plans: dict[bytes, ChunkPlan] = {}
        self.max_buffer_bytes = 0

    def note_plan(self, element: bytes, plan: ChunkPlan) -> None:
        with self._lock:
            self.chunk_plans[element] = plan

    def note_buffer(self, nbytes: int) -> None:
        with self._lock:
            if nbytes > self.max_buffer_bytes:
                self.max_buffer_bytes = nbytes


def drop_stop_words(
    raw: Iterable[RawTuple],
    q: int,
    config: KernelConfig | None = None,
) -> tuple[list[RawTuple], StageMetrics]:
    """Discard every element shared by more than q multisets.

    Input tuples must already be merged per (id, element), so an element's
    group length is the number of multisets containing it. The reducer buffers
    at most q + 1 values: one value too many proves the element is a stop word.
    """
    if q < 1:
        raise ValueError("q must be at least 1")

    def map_fn(t: RawTuple):
        return [KvRecord(t.element, None, pack_fields(t.id, encode_number(t.multiplicity)))]

    def reduce_fn(group):
        kept = []
        for _sec, value in group.values():
            kept.append(value)
            if len(kept) > q:
                return []
        out = []
        for value in kept:
            mid, mult_b = unpack_fields(value)
            out.append(RawTuple(mid, group.key, int(mult_b)))
        return out

    spec = StageSpec("stop-words", map_fn, reduce_fn)
    return run_stage(spec, raw, config)


def _entry_value(jt: JoinedTuple) -> bytes:
    return pack_fields(jt.id, encode_numbers(jt.uni), encode_number(jt.multiplicity))


def _decode_entry(value: bytes) -> tuple[bytes, bytes, int]:
    mid, uni_b, mult_b = unpack_fields(value)
    return mid, uni_b, int(mult_b)


def _pair_record(element, id_a, uni_a, f_a, id_b, uni_b, f_b):
    # orient the unordered pair canonically; unis stay packed until the end
    if id_a < id_b:
        return (PAIR_RECORD, pack_fields(id_a, id_b, uni_a, uni_b), element, f_a, f_b)
    return (PAIR_RECORD, pack_fields(id_b, id_a, uni_b, uni_a), element, f_b, f_a)


def decode_pair_record(record) -> tuple[PairKey, Contribution, ElementId]:
    _tag, key, element, f_l, f_r = record
    left, right, uni_l, uni_r = unpack_fields(key)
    return (
        PairKey(left, right, decode_numbers(uni_l), decode_numbers(uni_r)),
        Contribution(f_l, f_r),
        element,
    )


def _chunk_bounds(group, budget: int) -> list[tuple[int, int]]:
    bounds: list[tuple[int, int]] = []
    start = 0
    size = 0
    pos = 0
    for _sec, value in group.values():
        nbytes = len(value)
        if size and size + nbytes > budget:
            bounds.append((start, pos))
            start = pos
            size = 0
        size += nbytes
        pos += 1
    bounds.append((start, pos))
    return bounds


def _chunked_pairs(group, budget: int, recorder: ChunkRecorder | None) -> list:
    """Dissect a hot index entry into chunks and emit flagged chunk pairs.

    Only the upper triangle of chunk pairs (p <= q) is emitted, and diagonal
    pairs expand only their own i < j combinations downstream, so every
    (pair, element) contribution is produced exactly once. The loop rewinds
    the group once per chunk and never buffers more than one chunk.
    """
    element = group.key
    bounds = _chunk_bounds(group, budget)
    t = len(bounds)
    if recorder:
        recorder.note_plan(element, ChunkPlan(t, budget))
    out = []
    for p in range(t):
        p_start, p_end = bounds[p]
        chunk_p: list[bytes] = []
        packed_p: bytes | None = None
        q = p + 1
        q_values: list[bytes] = []
        for pos, (_sec, value) in enumerate(group.values()):
            if pos < p_start:
                continue
            if pos < p_end:
                chunk_p.append(value)
                if pos == p_end - 1:
                    if recorder:
                        recorder.note_buffer(sum(len(v) for v in chunk_p))
                    packed_p = pack_fields(*chunk_p)
                    chunk_p = []
                    out.append((CHUNK_RECORD, element, packed_p, None))
                continue
            q_values.append(value)
            if pos == bounds[q][1] - 1:
                out.append((CHUNK_RECORD, element, packed_p, pack_fields(*q_values)))
                q_values = []
                q += 1
    return out


def iter_chunk_pair_contributions(record) -> Iterator[tuple]:
    """Expand a flagged chunk pair into its plain contribution records."""
    _tag, element, left_b, right_b = record
    left = [_decode_entry(v) for v in unpack_fields(left_b)]
    if right_b is None:
        for i in range(len(left)):
            id_i, uni_i, f_i = left[i]
            for j in range(i + 1, len(left)):
                id_j, uni_j, f_j = left[j]
                yield _pair_record(element, id_i, uni_i, f_i, id_j, uni_j, f_j)
    else:
        right = [_decode_entry(v) for v in unpack_fields(right_b)]
        for id_i, uni_i, f_i in left:
            for id_j, uni_j, f_j in right:
                yield _pair_record(element, id_i, uni_i, f_i, id_j, uni_j, f_j)


def similarity1(
    joined: Iterable[JoinedTuple],
    measure: NsmMeasure,
    config: KernelConfig | None = None,
    chunk_budget: int | None = None,
    recorder: ChunkRecorder | None = None,
) -> tuple[list, StageMetrics]:
    """Build the inverted index and generate one contribution per pair per element."""
    config = config or KernelConfig()
    plain_budget = chunk_budget if chunk_budget is not None else config.memory_budget

    def map_fn(jt: JoinedTuple):
        return [KvRecord(jt.element, None, _entry_value(jt))]

    def reduce_fn(group):
        if group.byte_size <= plain_budget:
            entries = [_decode_entry(value) for _sec, value in group.values()]
            if recorder:
                recorder.note_buffer(group.byte_size)
            element = group.key
            out = []
            n = len(entries)
            for i in range(n):
                id_i, uni_i, f_i = entries[i]
                for j in range(i + 1, n):
                    id_j, uni_j, f_j = entries[j]
                    out.append(_pair_record(element, id_i, uni_i, f_i, id_j, uni_j, f_j))
            return out
        if chunk_budget is None:
            raise MemoryBudgetExceeded(
                f"inverted index entry for element {group.key!r} is "
                f"{group.byte_size} bytes, over the {plain_budget} byte budget; "
                "enable chunking (--chunk-budget) or drop stop words",
                subject=group.key,
            )
        return _chunked_pairs(group, chunk_budget, recorder)

    spec = StageSpec("similarity-1", map_fn, reduce_fn)
    return run_stage(spec, joined, config)


def similarity2(
    records: Iterable,
    measure: NsmMeasure,
    threshold: float,
    config: KernelConfig | None = None,
) -> tuple[list[SimilarPair], StageMetrics]:
    """Aggregate contributions per pair and keep pairs at or above threshold."""

    def map_fn(record):
        tag = record[0]
        if tag == PAIR_RECORD:
            _tag, key, _element, f_l, f_r = record
            return [KvRecord(key, None, encode_numbers(conj_addends(measure, f_l, f_r)))]
        out = []
        for pair_rec in iter_chunk_pair_contributions(record):
            _tag, key, _element, f_l, f_r = pair_rec
            out.append(KvRecord(key, None, encode_numbers(conj_addends(measure, f_l, f_r))))
        return out

    arity = measure.conj_arity

    def reduce_fn(group):
        totals = [0] * arity
        for _sec, value in group.values():
            for i, x in enumerate(decode_numbers(value)):
                totals[i] += x
        left, right, uni_l_b, uni_r_b = unpack_fields(group.key)
        try:
            sim = similarity(
                measure, decode_numbers(uni_l_b), decode_numbers(uni_r_b), tuple(totals)
            )
        except UndefinedSimilarityError as exc:
            raise UndefinedSimilarityError(f"pair ({left!r}, {right!r}): {exc}") from exc
        if sim >= threshold:
            return [SimilarPair(left, right, sim)]
        return []

    spec = StageSpec("similarity-2", map_fn, reduce_fn, combine_fn=sum_number_vectors)
    return run_stage(spec, records, config)


@dataclass
class SimPhaseResult:
    pairs: list[SimilarPair]
    metrics: list[StageMetrics]
    #: (element, left, right) -> contributions produced; instrumented runs only
    contribution_counts: Counter | None = None
    #: (left, right) -> number of shared-element contributions; instrumented only
    candidate_counts: Counter | None = None
    chunk_recorder: ChunkRecorder | None = None


def run_similarity_phase(
    joined: Iterable[JoinedTuple],
    measure: NsmMeasure,
    threshold: float,
    config: KernelConfig | None = None,
    chunk_budget: int | None = None,
    instrument: bool = False,
) -> SimPhaseResult:
    """Candidate generation followed by pair aggregation, sorted output.

    With ``instrument`` set, the records between the two stages are also
    scanned (chunk pairs expanded without re-running anything) to count each
    (element, pair) contribution; the counts feed exactly-once checks and the
    candidate dump.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    config = config or KernelConfig()
    recorder = ChunkRecorder() if instrument else None
    records, m1 = similarity1(joined, measure, config, chunk_budget, recorder)

    contribution_counts = None
    candidate_counts = None
    if instrument:
        contribution_counts = Counter()
        candidate_counts = Counter()
        for record in records:
            if record[0] == PAIR_RECORD:
                plain = (record,)
            else:
                plain = iter_chunk_pair_contributions(record)
            for _tag, key, element, _f_l, _f_r in plain:
                left, right, _ul, _ur = unpack_fields(key)
                contribution_counts[(element, left, right)] += 1
                candidate_counts[(left, right)] += 1

    pairs, m2 = similarity2(records, measure, threshold, config)
    pairs.sort(key=lambda p: (p.left, p.right))
    return SimPhaseResult(pairs, [m1, m2], contribution_counts, candidate_counts, recorder)
