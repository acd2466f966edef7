"""Exact all-pairs similarity joins for sets, multisets, and vectors.

Two-phase pipelines (a joining phase that attaches per-multiset partials to
every element tuple, and a shared similarity phase over an inverted index) run
on an embedded, deterministic map/shuffle/reduce kernel, next to a
prefix-filtering baseline and a brute-force oracle for verification.
"""

from .datagen import GeneratedDataset, GenSpec, dataset_stats, generate
from .errors import (
    InternalInconsistencyError,
    MemoryBudgetExceeded,
    ParseError,
    PreconditionRefused,
    SelfPairError,
    SimjoinError,
    StageExecutionError,
    UndefinedSimilarityError,
)
from .joining import (
    JoinResult,
    ShardingConfig,
    lookup_join,
    online_aggregation_join,
    read_uni_table,
    sharding_join,
    write_uni_table,
)
from .kernel import (
    DEFAULT_MEMORY_BUDGET,
    HASH_VERSION,
    KernelConfig,
    KvRecord,
    ReduceGroup,
    SideTable,
    StageMetrics,
    StageSpec,
    chain,
    default_partition,
    fingerprint64,
    load_side_data,
    metrics_to_jsonl,
    run_stage,
    stable_hash64,
)
from .measures import (
    MEASURE_NAMES,
    MEASURES,
    NsmMeasure,
    PartialSpec,
    compute_conj,
    compute_uni,
    full_similarity,
    get_measure,
    similarity,
)
from .model import (
    JoinedTuple,
    Multiset,
    RawTuple,
    SimilarPair,
    assemble_multisets,
    canonical_pair,
    expand_to_set,
    ingest_raw,
    pairs_to_tsv_bytes,
    read_raw_tsv,
    sort_pairs,
    tuples_to_tsv_bytes,
    write_pairs_tsv,
)
from .oracle import PAIR_GUARD, oracle_join
from .simphase import (
    ChunkPlan,
    ChunkRecorder,
    Contribution,
    PairKey,
    SimPhaseResult,
    drop_stop_words,
    run_similarity_phase,
    similarity1,
    similarity2,
)
from .vcl import (
    VCL_MEASURES,
    FrequencyOrder,
    PrefixScheme,
    VclResult,
    build_frequency_order,
    expansion_view,
    prefix_of,
    vcl_join,
    vcl_redundancy_report,
)

__version__ = "0.1.0"
