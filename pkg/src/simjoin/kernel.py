"""An in-process map/shuffle/reduce engine with deterministic multi-worker runs.

Shuffle records are byte-string key/secondary/value triples. A stage maps its
input on a pool of workers, partitions mapper output by a stable hash of the
key, optionally combines it per worker before the shuffle, sorts every
partition by (key, secondary key), and feeds key groups to the reducers.
Buffers that outgrow the per-worker memory budget spill to temporary run files
and are merged externally, so a group only has to fit in memory when a reducer
explicitly asks to materialize it; reducers may iterate a group any number of
times (file-backed groups re-read their byte range).

Map, combine, and reduce functions must be pure and deterministic. Output
order is deterministic for identical inputs, and the sorted output multiset is
independent of the worker count for order-insensitive reducers. External data
may only be attached at stage start via :func:`load_side_data`, which enforces
the same memory budget.
"""

from __future__ import annotations

import heapq
import json
import os
import struct
import tempfile
import time
from collections import defaultdict
from collections.abc import Callable, Iterable, Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, BinaryIO, NamedTuple

import xxhash

from .errors import (
    MemoryBudgetExceeded,
    PreconditionRefused,
    SimjoinError,
    StageExecutionError,
)

#: Identifies the partitioning/fingerprint hash so metrics stay comparable.
HASH_VERSION = "xxh64/1"
METRICS_SCHEMA = "simjoin-metrics/1"
DEFAULT_MEMORY_BUDGET = 64 * 1024 * 1024

_PARTITION_SEED = 0x517ABA5E
_FINGERPRINT_SEED = 0xF1B057A7
_U32 = struct.Struct("<I")
#: Version header of the engine-private spill files.
_RUN_MAGIC = b"SJRUN1\n"


def stable_hash64(data: bytes, seed: int = _PARTITION_SEED) -> int:
    """Fixed, versioned 64-bit hash (HASH_VERSION); stable across runs."""
    return xxhash.xxh64_intdigest(data, seed)


def fingerprint64(data: bytes) -> int:
    """Stable fingerprint, decoupled from the partitioning hash."""
    return xxhash.xxh64_intdigest(data, _FINGERPRINT_SEED)


def default_partition(key: bytes, worker_count: int) -> int:
    return stable_hash64(key) % worker_count


class KvRecord(NamedTuple):
    key: bytes
    secondary: bytes | None
    value: bytes


def record_size(rec: KvRecord) -> int:
    sec = rec.secondary
    return len(rec.key) + (len(sec) if sec is not None else 0) + len(rec.value)


@dataclass(frozen=True)
class KernelConfig:
    """Run-wide engine settings shared by every stage of a pipeline."""

    worker_count: int = 4
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    secondary_keys_enabled: bool = True
    spill_dir: str | None = None

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")
        if self.memory_budget < 1:
            raise ValueError("memory_budget must be positive")


@dataclass(frozen=True)
class StageSpec:
    """One map/shuffle/reduce stage.

    ``map_fn`` turns an input record into KvRecords (or, when ``reduce_fn`` is
    None, directly into output records: the stage is map-only and nothing is
    shuffled). ``combine_fn`` maps a key and its local value list to a reduced
    value list; it must be associative and commutative, and is only allowed on
    stages without secondary sorting. ``partition_fn`` maps (key, worker_count)
    to a worker index; the default hashes the key.
    """

    name: str
    map_fn: Callable[[Any], Iterable[Any]]
    reduce_fn: Callable[["ReduceGroup"], Iterable[Any]] | None = None
    combine_fn: Callable[[bytes, list[bytes]], list[bytes]] | None = None
    secondary_sort: bool = False
    worker_count: int | None = None
    partition_fn: Callable[[bytes, int], int] | None = None


@dataclass
class StageMetrics:
    stage: str
    records_mapped: int = 0
    records_shuffled: int = 0
    bytes_shuffled: int = 0
    max_group_length: int = 0
    max_group_bytes: int = 0
    per_worker_wall_time: list[float] = field(default_factory=list)
    combiner_reduction_ratio: float = 1.0
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": METRICS_SCHEMA,
            "hash_version": HASH_VERSION,
            "stage": self.stage,
            "records_mapped": self.records_mapped,
            "records_shuffled": self.records_shuffled,
            "bytes_shuffled": self.bytes_shuffled,
            "max_group_length": self.max_group_length,
            "max_group_bytes": self.max_group_bytes,
            "per_worker_wall_time": [round(t, 6) for t in self.per_worker_wall_time],
            "combiner_reduction_ratio": self.combiner_reduction_ratio,
            "warnings": list(self.warnings),
        }


def metrics_to_jsonl(metrics: Iterable[StageMetrics], extra_rows: Iterable[dict] = ()) -> str:
    rows = [m.to_json() for m in metrics]
    rows.extend(extra_rows)
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)


class SideTable(Mapping):
    """Immutable byte-keyed table side-loaded at stage start."""

    def __init__(self, data: dict[bytes, bytes], byte_size: int):
        self._data = MappingProxyType(data)
        self.byte_size = byte_size

    def __getitem__(self, key: bytes) -> bytes:
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)


def load_side_data(table: Mapping[bytes, bytes], config: KernelConfig) -> SideTable:
    """Snapshot a lookup table for use by a stage's workers.

    The snapshot must fit the per-worker memory budget; a table that does not
    raises MemoryBudgetExceeded instead of thrashing.
    """
    data: dict[bytes, bytes] = {}
    nbytes = 0
    for k, v in table.items():
        if not isinstance(k, bytes) or not isinstance(v, bytes):
            raise TypeError("side tables map bytes to bytes")
        data[k] = v
        nbytes += len(k) + len(v)
    if nbytes > config.memory_budget:
        raise MemoryBudgetExceeded(
            f"side table of {len(data)} entries ({nbytes} bytes) exceeds the "
            f"per-worker memory budget ({config.memory_budget} bytes)",
            subject="side-table",
        )
    return SideTable(data, nbytes)


class ReduceGroup:
    """All values of one reduce key; iteration is repeatable (rewindable)."""

    key: bytes
    value_count: int
    byte_size: int  # secondary + value payload bytes

    def values(self) -> Iterator[tuple[bytes | None, bytes]]:
        raise NotImplementedError

    def require_in_memory(self, budget: int, what: str = "reduce group") -> list[tuple[bytes | None, bytes]]:
        """Materialize the group, refusing if it exceeds the memory budget."""
        if self.byte_size > budget:
            raise MemoryBudgetExceeded(
                f"{what} ({self.byte_size} bytes in {self.value_count} values) "
                f"exceeds the memory budget ({budget} bytes)",
                subject=self.key,
            )
        return list(self.values())


class _ListGroup(ReduceGroup):
    def __init__(self, key: bytes, records: list[KvRecord], byte_size: int):
        self.key = key
        self._records = records
        self.value_count = len(records)
        self.byte_size = byte_size

    def values(self):
        for rec in self._records:
            yield rec.secondary, rec.value


class _FileGroup(ReduceGroup):
    def __init__(self, key: bytes, path: str, offset: int, value_count: int, byte_size: int):
        self.key = key
        self._path = path
        self._offset = offset
        self.value_count = value_count
        self.byte_size = byte_size

    def values(self):
        with _open_run(self._path) as f:
            f.seek(self._offset)
            for _ in range(self.value_count):
                rec = _read_record(f)
                yield rec.secondary, rec.value


def _write_record(out: BinaryIO, rec: KvRecord) -> None:
    key, sec, val = rec
    out.write(_U32.pack(len(key)))
    out.write(key)
    if sec is None:
        out.write(b"\x00")
    else:
        out.write(b"\x01")
        out.write(_U32.pack(len(sec)))
        out.write(sec)
    out.write(_U32.pack(len(val)))
    out.write(val)


def _read_record(f: BinaryIO) -> KvRecord | None:
    head = f.read(4)
    if not head:
        return None
    (klen,) = _U32.unpack(head)
    key = f.read(klen)
    flag = f.read(1)
    if flag == b"\x01":
        (slen,) = _U32.unpack(f.read(4))
        sec = f.read(slen)
    else:
        sec = None
    (vlen,) = _U32.unpack(f.read(4))
    return KvRecord(key, sec, f.read(vlen))


def _open_run(path: str) -> BinaryIO:
    f = open(path, "rb")
    if f.read(len(_RUN_MAGIC)) != _RUN_MAGIC:
        f.close()
        raise SimjoinError(f"spill file {path} does not carry the expected format header")
    return f


class _MemorySegment:
    __slots__ = ("records", "nbytes")

    def __init__(self, records: list[KvRecord], nbytes: int):
        self.records = records
        self.nbytes = nbytes

    def iter_records(self):
        return iter(self.records)


class _FileSegment:
    __slots__ = ("path", "offset", "count", "nbytes")

    def __init__(self, path: str, offset: int, count: int, nbytes: int):
        self.path = path
        self.offset = offset
        self.count = count
        self.nbytes = nbytes

    def iter_records(self):
        with _open_run(self.path) as f:
            f.seek(self.offset)
            for _ in range(self.count):
                yield _read_record(f)


def _sort_key(rec: KvRecord):
    return (rec.key, rec.secondary or b"")


def _describe(obj: Any) -> str:
    text = repr(obj)
    return text if len(text) <= 200 else text[:200] + "..."


def _split(records: list, n: int) -> list[list]:
    base, extra = divmod(len(records), n)
    chunks = []
    start = 0
    for w in range(n):
        size = base + (1 if w < extra else 0)
        chunks.append(records[start:start + size])
        start += size
    return chunks


class _MapResult(NamedTuple):
    segments: dict[int, list]
    mapped: int
    shuffled: int
    shuffle_bytes: int
    warnings: list[str]
    duration: float


def _run_map_worker(
    spec: StageSpec,
    config: KernelConfig,
    n_parts: int,
    records: list,
    tmpdir: str,
    worker_idx: int,
) -> _MapResult:
    t0 = time.perf_counter()
    partition = spec.partition_fn or default_partition
    buffer: list[tuple[int, KvRecord]] = []
    buffer_bytes = 0
    mapped = 0
    shuffled = 0
    shuffle_bytes = 0
    spill_idx = 0
    warnings: list[str] = []
    segments: dict[int, list] = defaultdict(list)

    def flush(spill_to_disk: bool) -> None:
        nonlocal buffer, buffer_bytes, shuffled, shuffle_bytes, spill_idx
        if not buffer:
            return
        buffer.sort(key=lambda pr: (pr[0],) + _sort_key(pr[1]))
        parts: dict[int, list[KvRecord]] = defaultdict(list)
        if spec.combine_fn is None:
            for p, rec in buffer:
                parts[p].append(rec)
        else:
            i = 0
            n = len(buffer)
            while i < n:
                p, first = buffer[i]
                key = first.key
                j = i + 1
                while j < n and buffer[j][0] == p and buffer[j][1].key == key:
                    j += 1
                values = [buffer[t][1].value for t in range(i, j)]
                try:
                    combined = list(spec.combine_fn(key, values))
                except SimjoinError:
                    raise
                except Exception:
                    raise StageExecutionError(spec.name, "combine", f"key {key!r}")
                if len(combined) > len(values):
                    warnings.append(
                        f"non-contracting combiner on key {key!r}: "
                        f"{len(values)} values in, {len(combined)} out"
                    )
                for v in combined:
                    if not isinstance(v, bytes):
                        raise StageExecutionError(
                            spec.name, "combine", f"non-bytes value for key {key!r}"
                        )
                    parts[p].append(KvRecord(key, None, v))
                i = j
        if spill_to_disk:
            # one run file per spill carries every partition; offsets index them
            path = os.path.join(tmpdir, f"map-{worker_idx}-{spill_idx}.run")
            spill_idx += 1
            with open(path, "wb") as out:
                out.write(_RUN_MAGIC)
                for p in sorted(parts):
                    recs = parts[p]
                    nbytes = sum(record_size(r) for r in recs)
                    shuffled += len(recs)
                    shuffle_bytes += nbytes
                    offset = out.tell()
                    for rec in recs:
                        _write_record(out, rec)
                    segments[p].append(_FileSegment(path, offset, len(recs), nbytes))
        else:
            for p in sorted(parts):
                recs = parts[p]
                nbytes = sum(record_size(r) for r in recs)
                shuffled += len(recs)
                shuffle_bytes += nbytes
                segments[p].append(_MemorySegment(recs, nbytes))
        buffer = []
        buffer_bytes = 0

    for record in records:
        try:
            outs = spec.map_fn(record)
        except SimjoinError:
            raise
        except Exception:
            raise StageExecutionError(spec.name, "map", f"input record {_describe(record)}")
        for rec in outs:
            if not isinstance(rec, KvRecord):
                raise StageExecutionError(
                    spec.name, "map", f"non-KvRecord output for input {_describe(record)}"
                )
            if not rec.key:
                raise StageExecutionError(spec.name, "map", "record with an empty key")
            if spec.secondary_sort:
                if rec.secondary is None:
                    raise StageExecutionError(
                        spec.name, "map",
                        f"record for key {rec.key!r} is missing its secondary key",
                    )
            elif rec.secondary is not None:
                raise StageExecutionError(
                    spec.name, "map",
                    f"record for key {rec.key!r} carries a secondary key but the "
                    "stage does not declare secondary sorting",
                )
            p = partition(rec.key, n_parts)
            if not 0 <= p < n_parts:
                raise StageExecutionError(
                    spec.name, "map", f"partition index {p} out of range for key {rec.key!r}"
                )
            mapped += 1
            buffer.append((p, rec))
            buffer_bytes += record_size(rec)
            if buffer_bytes > config.memory_budget:
                flush(spill_to_disk=True)
    flush(spill_to_disk=False)
    return _MapResult(segments, mapped, shuffled, shuffle_bytes, warnings, time.perf_counter() - t0)


class _ReduceResult(NamedTuple):
    outputs: list
    group_count: int
    max_group_length: int
    max_group_bytes: int
    duration: float


def _run_reduce_worker(
    spec: StageSpec,
    config: KernelConfig,
    segments: list,
    tmpdir: str,
    worker_idx: int,
) -> _ReduceResult:
    t0 = time.perf_counter()
    outputs: list = []
    group_count = 0
    max_len = 0
    max_bytes = 0

    def reduce_one(group: ReduceGroup) -> None:
        nonlocal group_count, max_len, max_bytes
        group_count += 1
        max_len = max(max_len, group.value_count)
        max_bytes = max(max_bytes, group.byte_size)
        try:
            outs = spec.reduce_fn(group)
        except SimjoinError:
            raise
        except Exception:
            raise StageExecutionError(spec.name, "reduce", f"key {group.key!r}")
        outputs.extend(outs)

    total_bytes = sum(seg.nbytes for seg in segments)
    merged = heapq.merge(*(seg.iter_records() for seg in segments), key=_sort_key)

    if total_bytes <= config.memory_budget:
        records = list(merged)
        i = 0
        n = len(records)
        while i < n:
            key = records[i].key
            j = i
            gbytes = 0
            while j < n and records[j].key == key:
                rec = records[j]
                gbytes += (len(rec.secondary) if rec.secondary is not None else 0) + len(rec.value)
                j += 1
            reduce_one(_ListGroup(key, records[i:j], gbytes))
            i = j
    else:
        # the partition itself does not fit: stream it through a sorted spill
        # file and hand out file-backed (rewindable) groups
        path = os.path.join(tmpdir, f"part-{worker_idx}.grp")
        index: list[tuple[bytes, int, int, int]] = []  # key, offset, count, bytes
        with open(path, "wb") as out:
            out.write(_RUN_MAGIC)
            cur_key = None
            offset = 0
            count = 0
            gbytes = 0
            for rec in merged:
                if rec.key != cur_key:
                    if cur_key is not None:
                        index.append((cur_key, offset, count, gbytes))
                    cur_key = rec.key
                    offset = out.tell()
                    count = 0
                    gbytes = 0
                _write_record(out, rec)
                count += 1
                gbytes += (len(rec.secondary) if rec.secondary is not None else 0) + len(rec.value)
            if cur_key is not None:
                index.append((cur_key, offset, count, gbytes))
        for key, offset, count, gbytes in index:
            reduce_one(_FileGroup(key, path, offset, count, gbytes))

    return _ReduceResult(outputs, group_count, max_len, max_bytes, time.perf_counter() - t0)


def run_stage(
    spec: StageSpec,
    records: Iterable[Any],
    config: KernelConfig | None = None,
) -> tuple[list[Any], StageMetrics]:
    """Execute one stage and return (output records, metrics).

    The output, viewed as a multiset of records, equals the sequential
    map -> group -> (combine) -> reduce reference execution, and two runs with
    the same spec and input produce identical output.
    """
    config = config or KernelConfig()
    if spec.secondary_sort and not config.secondary_keys_enabled:
        raise PreconditionRefused(
            f"stage {spec.name!r} needs secondary keys but the kernel runs with "
            "secondary keys disabled"
        )
    if spec.combine_fn is not None and spec.secondary_sort:
        raise ValueError("combiners are not supported on stages with secondary sorting")
    if spec.combine_fn is not None and spec.reduce_fn is None:
        raise ValueError("a map-only stage cannot have a combiner")
    n_workers = spec.worker_count or config.worker_count
    if n_workers < 1:
        raise ValueError("worker_count must be at least 1")

    records = records if isinstance(records, list) else list(records)
    metrics = StageMetrics(stage=spec.name)
    chunks = _split(records, n_workers)

    if spec.reduce_fn is None:
        def map_only(w: int) -> tuple[list, float]:
            t0 = time.perf_counter()
            out: list = []
            for record in chunks[w]:
                try:
                    out.extend(spec.map_fn(record))
                except SimjoinError:
                    raise
                except Exception:
                    raise StageExecutionError(
                        spec.name, "map", f"input record {_describe(record)}"
                    )
            return out, time.perf_counter() - t0

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(map_only, range(n_workers)))
        outputs: list = []
        for out, duration in results:
            outputs.extend(out)
            metrics.per_worker_wall_time.append(duration)
        metrics.records_mapped = len(outputs)
        return outputs, metrics

    with tempfile.TemporaryDirectory(prefix=f"simjoin-{spec.name}-", dir=config.spill_dir) as tmpdir:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            map_results = list(
                pool.map(
                    lambda w: _run_map_worker(spec, config, n_workers, chunks[w], tmpdir, w),
                    range(n_workers),
                )
            )
        warnings: list[str] = []
        segments_by_part: dict[int, list] = {p: [] for p in range(n_workers)}
        for res in map_results:
            metrics.records_mapped += res.mapped
            metrics.records_shuffled += res.shuffled
            metrics.bytes_shuffled += res.shuffle_bytes
            for w in res.warnings:
                if w not in warnings:
                    warnings.append(w)
            for p, segs in res.segments.items():
                segments_by_part[p].extend(segs)
        metrics.warnings = warnings

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reduce_results = list(
                pool.map(
                    lambda w: _run_reduce_worker(spec, config, segments_by_part[w], tmpdir, w),
                    range(n_workers),
                )
            )
        outputs = []
        for w, res in enumerate(reduce_results):
            outputs.extend(res.outputs)
            metrics.max_group_length = max(metrics.max_group_length, res.max_group_length)
            metrics.max_group_bytes = max(metrics.max_group_bytes, res.max_group_bytes)
            metrics.per_worker_wall_time.append(map_results[w].duration + res.duration)

    if spec.combine_fn is not None and metrics.records_mapped:
        metrics.combiner_reduction_ratio = metrics.records_shuffled / metrics.records_mapped
    return outputs, metrics


def chain(
    specs: Iterable[StageSpec],
    records: Iterable[Any],
    config: KernelConfig | None = None,
) -> tuple[list[Any], list[StageMetrics]]:
    """Run stages in sequence, feeding each stage's output to the next map."""
    out = records if isinstance(records, list) else list(records)
    all_metrics: list[StageMetrics] = []
    for idx, spec in enumerate(specs):
        try:
            out, metrics = run_stage(spec, out, config)
        except SimjoinError as exc:
            exc.stage_index = idx  # type: ignore[attr-defined]
            raise
        all_metrics.append(metrics)
    return out, all_metrics
