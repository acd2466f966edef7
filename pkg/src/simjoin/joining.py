"""Joining pipelines: attach each multiset's unilateral partials to its tuples.

All three algorithms consume merged raw tuples and emit one joined tuple per
(id, element) entry; they only differ in how the per-multiset partial sums
travel. Their outputs are identical as multisets of joined tuples.

 - online-aggregation: one stage; partial addends travel ahead of the element
   tuples under a lower secondary key, so one reducer pass per multiset
   finishes the job. Needs kernel secondary-key support.
 - lookup: two stages; the first reduces all tuples to an id -> partials
   table, the second is map-only and joins against the side-loaded table.
   Fails cleanly when the whole table does not fit the memory budget.
 - sharding: a hybrid; only multisets with more than ``c_threshold`` distinct
   elements land in the side table. Their tuples are spread over reducers by
   an element fingerprint; everything else is aggregated on the fly by a
   single reducer per multiset using a rewindable two-pass scan.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass

from .errors import InternalInconsistencyError, MemoryBudgetExceeded, PreconditionRefused
from .kernel import (
    KernelConfig,
    KvRecord,
    SideTable,
    StageMetrics,
    StageSpec,
    fingerprint64,
    load_side_data,
    run_stage,
)
from .measures import NsmMeasure, uni_addends
from .model import JoinedTuple, MultisetId, RawTuple
from .wire import (
    decode_number,
    decode_numbers,
    encode_number,
    encode_numbers,
    pack_fields,
    pack_u64,
    sum_number_vectors,
    unpack_fields,
)

_SEC_PARTIAL = b"\x00"
_SEC_ELEMENT = b"\x01"
_FLAG_SHARDED = b"S"
_FLAG_PLAIN = b"P"
# second key field of unsharded tuples; sorts before every 8-byte fingerprint
_UNSHARDED_MARKER = b""


@dataclass(frozen=True)
class ShardingConfig:
    c_threshold: int
    fingerprint_fn: Callable[[bytes], int] = fingerprint64

    def __post_init__(self):
        if self.c_threshold < 1:
            raise ValueError("c_threshold must be at least 1")


@dataclass
class JoinResult:
    joined: list[JoinedTuple]
    metrics: list[StageMetrics]
    #: id -> partial vector table built by lookup (all ids) or sharding
    #: (sharded ids only); None for online-aggregation.
    uni_table: dict[MultisetId, tuple] | None = None
    sharded_ids: frozenset[MultisetId] | None = None


def online_aggregation_join(
    raw: Iterable[RawTuple],
    measure: NsmMeasure,
    config: KernelConfig | None = None,
) -> JoinResult:
    config = config or KernelConfig()
    if not config.secondary_keys_enabled:
        raise PreconditionRefused(
            "online-aggregation requires kernel secondary keys; rerun without "
            "--no-secondary-keys or use the lookup or sharding algorithm"
        )
    arity = measure.uni_arity

    def map_fn(t: RawTuple):
        return [
            KvRecord(t.id, _SEC_PARTIAL, encode_numbers(uni_addends(measure, t.multiplicity))),
            KvRecord(t.id, _SEC_ELEMENT, pack_fields(t.element, encode_number(t.multiplicity))),
        ]

    def reduce_fn(group):
        totals = [0] * arity
        uni = None
        out = []
        for sec, value in group.values():
            if sec == _SEC_PARTIAL:
                for i, x in enumerate(decode_numbers(value)):
                    totals[i] += x
            else:
                if uni is None:
                    uni = tuple(totals)
                element, mult_b = unpack_fields(value)
                out.append(JoinedTuple(group.key, uni, element, int(mult_b)))
        return out

    spec = StageSpec("online-aggregation", map_fn, reduce_fn, secondary_sort=True)
    joined, metrics = run_stage(spec, raw, config)
    return JoinResult(joined, [metrics])


def _partial_sum_map(measure: NsmMeasure):
    # value = (distinct-element count, partial addends...); the count feeds
    # the sharding threshold and is ignored by lookup
    def map_fn(t: RawTuple):
        return [KvRecord(t.id, None, encode_numbers((1,) + uni_addends(measure, t.multiplicity)))]

    return map_fn


def _partial_sum_reduce(c_threshold: int | None = None):
    def reduce_fn(group):
        totals: list | None = None
        for _sec, value in group.values():
            nums = decode_numbers(value)
            if totals is None:
                totals = list(nums)
            else:
                for i, x in enumerate(nums):
                    totals[i] += x
        count = totals[0]
        uni = tuple(totals[1:])
        if c_threshold is not None and count <= c_threshold:
            return []
        return [(group.key, uni)]

    return reduce_fn


def _lookup_map_fn(side: SideTable):
    def map_fn(t: RawTuple):
        packed = side.get(t.id)
        if packed is None:
            raise InternalInconsistencyError(
                f"multiset {t.id!r} is missing from the lookup table"
            )
        return [JoinedTuple(t.id, decode_numbers(packed), t.element, t.multiplicity)]

    return map_fn


def lookup_join(
    raw: Iterable[RawTuple],
    measure: NsmMeasure,
    config: KernelConfig | None = None,
) -> JoinResult:
    config = config or KernelConfig()
    raw = raw if isinstance(raw, list) else list(raw)
    spec1 = StageSpec(
        "lookup-1",
        _partial_sum_map(measure),
        _partial_sum_reduce(),
        combine_fn=sum_number_vectors,
    )
    entries, m1 = run_stage(spec1, raw, config)
    # may raise MemoryBudgetExceeded: the whole table has to fit every mapper
    side = load_side_data({mid: encode_numbers(uni) for mid, uni in entries}, config)
    spec2 = StageSpec("lookup-2", _lookup_map_fn(side), reduce_fn=None)
    joined, m2 = run_stage(spec2, raw, config)
    return JoinResult(joined, [m1, m2], uni_table=dict(entries))


def sharding_join(
    raw: Iterable[RawTuple],
    measure: NsmMeasure,
    sharding: ShardingConfig,
    config: KernelConfig | None = None,
) -> JoinResult:
    config = config or KernelConfig()
    raw = raw if isinstance(raw, list) else list(raw)
    arity = measure.uni_arity

    spec1 = StageSpec(
        "sharding-1",
        _partial_sum_map(measure),
        _partial_sum_reduce(sharding.c_threshold),
        combine_fn=sum_number_vectors,
    )
    entries, m1 = run_stage(spec1, raw, config)
    side = load_side_data({mid: encode_numbers(uni) for mid, uni in entries}, config)
    fingerprint = sharding.fingerprint_fn

    def map_fn(t: RawTuple):
        packed = side.get(t.id)
        mult_b = encode_number(t.multiplicity)
        if packed is not None:
            key = pack_fields(t.id, pack_u64(fingerprint(t.element)))
            value = pack_fields(_FLAG_SHARDED, packed, t.element, mult_b)
        else:
            key = pack_fields(t.id, _UNSHARDED_MARKER)
            value = pack_fields(_FLAG_PLAIN, t.element, mult_b)
        return [KvRecord(key, None, value)]

    def reduce_fn(group):
        mid, _marker = unpack_fields(group.key)
        out = []
        first = next(group.values(), None)
        if first is None:
            return out
        if unpack_fields(first[1])[0] == _FLAG_SHARDED:
            for _sec, value in group.values():
                _flag, packed, element, mult_b = unpack_fields(value)
                out.append(JoinedTuple(mid, decode_numbers(packed), element, int(mult_b)))
        else:
            if group.byte_size > config.memory_budget:
                raise MemoryBudgetExceeded(
                    f"unsharded multiset {mid!r} ({group.byte_size} bytes) exceeds "
                    f"the memory budget ({config.memory_budget} bytes); "
                    "c_threshold is set too high",
                    subject=mid,
                )
            totals = [0] * arity
            for _sec, value in group.values():
                _flag, _element, mult_b = unpack_fields(value)
                for i, x in enumerate(uni_addends(measure, int(mult_b))):
                    totals[i] += x
            uni = tuple(totals)
            for _sec, value in group.values():
                _flag, element, mult_b = unpack_fields(value)
                out.append(JoinedTuple(mid, uni, element, int(mult_b)))
        return out

    spec2 = StageSpec("sharding-2", map_fn, reduce_fn)
    joined, m2 = run_stage(spec2, raw, config)
    return JoinResult(
        joined,
        [m1, m2],
        uni_table=dict(entries),
        sharded_ids=frozenset(mid for mid, _uni in entries),
    )


def write_uni_table(path: str, table: Mapping[MultisetId, tuple]) -> None:
    """Persist an id -> partials table as `id TAB v1,v2,...` rows."""
    with open(path, "wb") as f:
        for mid in sorted(table):
            values = b",".join(encode_number(v) for v in table[mid])
            f.write(b"%s\t%s\n" % (mid, values))


def read_uni_table(path: str) -> dict[MultisetId, tuple]:
    table: dict[bytes, tuple] = {}
    with open(path, "rb") as f:
        for line in f:
            line = line.rstrip(b"\r\n")
            if not line:
                continue
            mid, values = line.split(b"\t")
            table[mid] = tuple(decode_number(v) for v in values.split(b","))
    return table
