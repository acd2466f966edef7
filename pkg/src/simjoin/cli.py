"""Command line front end: run pipelines, sweeps, data generation, and stats.

Every run option can also come from the environment (``VSJ_<OPTION>`` with
underscores) or from a ``--config`` file of ``key = value`` lines; explicit
flags win over the environment, which wins over the file. Failure modes map to
stable exit codes so scripted comparisons can tell a refused precondition from
a blown memory budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace

from .datagen import GeneratedDataset, GenSpec, dataset_stats, generate
from .errors import (
    MemoryBudgetExceeded,
    ParseError,
    PreconditionRefused,
    SimjoinError,
)
from .joining import (
    JoinResult,
    ShardingConfig,
    lookup_join,
    online_aggregation_join,
    sharding_join,
    write_uni_table,
)
from .kernel import DEFAULT_MEMORY_BUDGET, KernelConfig, StageMetrics, metrics_to_jsonl
from .measures import get_measure
from .model import (
    RawTuple,
    SimilarPair,
    assemble_multisets,
    pairs_to_tsv_bytes,
    read_raw_tsv,
    tuples_to_tsv_bytes,
)
from .oracle import oracle_join
from .simphase import drop_stop_words, run_similarity_phase
from .vcl import VCL_MEASURES, vcl_join, vcl_redundancy_report

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARSE_ERROR = 3
EXIT_MEMORY_BUDGET = 4
EXIT_PRECONDITION_REFUSED = 5

ENV_PREFIX = "VSJ_"
ALGORITHMS = ("online-agg", "lookup", "sharding", "vcl", "oracle")

_SIZE_SUFFIXES = {
    "b": 1,
    "k": 1024,
    "kib": 1024,
    "m": 1024 ** 2,
    "mib": 1024 ** 2,
    "g": 1024 ** 3,
    "gib": 1024 ** 3,
}


def parse_bytes(text: str) -> int:
    """Parse '4096', '64KiB', '1m', ... into a byte count."""
    text = text.strip().lower()
    for suffix in sorted(_SIZE_SUFFIXES, key=len, reverse=True):
        if text.endswith(suffix):
            number = text[: -len(suffix)].strip()
            return int(float(number) * _SIZE_SUFFIXES[suffix])
    return int(text)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    algorithm: str = ""
    input: str | None = None
    output: str | None = None
    metrics: str | None = None
    measure: str = "ruzicka"
    threshold: float = 0.5
    workers: int = 4
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    stopword_q: int | None = None
    sharding_c: int | None = None
    chunk_budget: int | None = None
    no_secondary_keys: bool = False
    seed: int = 0
    hash_order: bool = False
    force_oracle: bool = False
    emit_candidates: str | None = None
    uni_table: str | None = None

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        get_measure(self.measure)
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.memory_budget < 1:
            raise ValueError("memory-budget must be positive")
        if (self.algorithm == "sharding") != (self.sharding_c is not None):
            raise ValueError("sharding-c is required for, and only for, the sharding algorithm")
        if self.stopword_q is not None and self.stopword_q < 1:
            raise ValueError("stopword-q must be at least 1")
        if self.chunk_budget is not None and self.chunk_budget < 1:
            raise ValueError("chunk-budget must be positive")


def kernel_config(cfg: RunConfig) -> KernelConfig:
    return KernelConfig(
        worker_count=cfg.workers,
        memory_budget=cfg.memory_budget,
        secondary_keys_enabled=not cfg.no_secondary_keys,
    )


@dataclass
class RunOutcome:
    pairs: list[SimilarPair]
    stage_metrics: list[StageMetrics]
    extra_metrics: list[dict] = field(default_factory=list)
    wall_time: float = 0.0


def execute(raw: list[RawTuple], cfg: RunConfig) -> RunOutcome:
    """Run the configured pipeline on already-ingested tuples."""
    cfg.validate()
    measure = get_measure(cfg.measure)
    config = kernel_config(cfg)
    started = time.perf_counter()
    metrics: list[StageMetrics] = []
    extra: list[dict] = []

    if cfg.stopword_q is not None:
        raw, stop_metrics = drop_stop_words(raw, cfg.stopword_q, config)
        metrics.append(stop_metrics)

    if cfg.algorithm == "oracle":
        pairs = oracle_join(
            assemble_multisets(raw), measure, cfg.threshold, force=cfg.force_oracle
        )
    elif cfg.algorithm == "vcl":
        result = vcl_join(raw, measure, cfg.threshold, config, hash_order=cfg.hash_order)
        metrics.extend(result.metrics)
        extra.append(vcl_redundancy_report(result))
        pairs = result.pairs
    else:
        join = _run_join(raw, cfg, measure, config)
        metrics.extend(join.metrics)
        if cfg.uni_table and join.uni_table is not None:
            write_uni_table(cfg.uni_table, join.uni_table)
        sim = run_similarity_phase(
            join.joined,
            measure,
            cfg.threshold,
            config,
            chunk_budget=cfg.chunk_budget,
            instrument=bool(cfg.emit_candidates),
        )
        metrics.extend(sim.metrics)
        pairs = sim.pairs
        if cfg.emit_candidates:
            with open(cfg.emit_candidates, "wb") as f:
                for (left, right), count in sorted(sim.candidate_counts.items()):
                    f.write(b"%s\t%s\t%d\n" % (left, right, count))

    return RunOutcome(pairs, metrics, extra, time.perf_counter() - started)


def _run_join(raw, cfg: RunConfig, measure, config) -> JoinResult:
    if cfg.algorithm == "online-agg":
        return online_aggregation_join(raw, measure, config)
    if cfg.algorithm == "lookup":
        return lookup_join(raw, measure, config)
    return sharding_join(raw, measure, ShardingConfig(cfg.sharding_c), config)


def run(cfg: RunConfig) -> RunOutcome:
    """Read the input TSV, execute, and write the pair and metrics files."""
    if not cfg.input:
        raise ValueError("an input path is required")
    raw = read_raw_tsv(cfg.input)
    outcome = execute(raw, cfg)
    rendered = pairs_to_tsv_bytes(outcome.pairs)
    if cfg.output:
        with open(cfg.output, "wb") as f:
            f.write(rendered)
    else:
        sys.stdout.buffer.write(rendered)
    if cfg.metrics:
        with open(cfg.metrics, "w", encoding="utf-8") as f:
            f.write(metrics_to_jsonl(outcome.stage_metrics, outcome.extra_metrics))
    print(
        f"{cfg.algorithm}: {len(outcome.pairs)} pairs at t={cfg.threshold:g} "
        f"in {outcome.wall_time:.2f}s",
        file=sys.stderr,
    )
    return outcome


SWEEP_KINDS = ("thresholds", "workers", "sharding-c")

_DEFAULT_SWEEPS = {
    "thresholds": [round(0.1 * i, 1) for i in range(1, 10)],
    "workers": [1, 2, 4, 8],
    "sharding-c": [2 ** e for e in range(5, 16)],
}


def bench_sweep(
    base: RunConfig,
    sweep: str,
    values: list | None = None,
    report_path: str | None = None,
) -> list[dict]:
    """One report row per (sweep point, algorithm); cross-checks pair counts.

    Threshold sweeps run every algorithm that supports the measure and assert
    that they agree on the pair count at each point. Worker and sharding-c
    sweeps rerun one algorithm and assert that the output rows are identical
    across points. A failing point aborts the sweep after saving the rows
    collected so far.
    """
    if sweep not in SWEEP_KINDS:
        raise ValueError(f"sweep must be one of {', '.join(SWEEP_KINDS)}")
    if not base.input:
        raise ValueError("an input path is required")
    values = values if values is not None else _DEFAULT_SWEEPS[sweep]
    raw = read_raw_tsv(base.input)
    rows: list[dict] = []

    def run_point(cfg: RunConfig) -> tuple[RunOutcome, dict]:
        outcome = execute(raw, cfg)
        row = {
            "sweep": sweep,
            "value": cfg.threshold if sweep == "thresholds" else (
                cfg.workers if sweep == "workers" else cfg.sharding_c
            ),
            "algorithm": cfg.algorithm,
            "wall_time_s": round(outcome.wall_time, 6),
            "bytes_shuffled": sum(m.bytes_shuffled for m in outcome.stage_metrics),
            "max_group_length": max(
                (m.max_group_length for m in outcome.stage_metrics), default=0
            ),
            "pairs": len(outcome.pairs),
        }
        rows.append(row)
        return outcome, row

    def save_report() -> None:
        if report_path:
            with open(report_path, "w", encoding="utf-8") as f:
                for row in rows:
                    f.write(json.dumps(row, sort_keys=True) + "\n")

    try:
        if sweep == "thresholds":
            algorithms = ["online-agg", "lookup", "sharding"]
            if base.measure in VCL_MEASURES:
                algorithms.append("vcl")
            for t in values:
                counts = {}
                rendered = {}
                for algorithm in algorithms:
                    cfg = replace(
                        base,
                        algorithm=algorithm,
                        threshold=float(t),
                        sharding_c=(base.sharding_c or 8) if algorithm == "sharding" else None,
                    )
                    outcome, row = run_point(cfg)
                    counts[algorithm] = row["pairs"]
                    rendered[algorithm] = pairs_to_tsv_bytes(outcome.pairs)
                if len(set(rendered.values())) != 1:
                    raise SimjoinError(
                        f"algorithms disagree at t={t}: pair counts {counts} "
                        "(partial report saved)"
                    )
        elif sweep == "workers":
            if base.algorithm == "oracle":
                raise ValueError("worker sweeps need a pipeline algorithm")
            reference: bytes | None = None
            for w in values:
                cfg = replace(base, workers=int(w))
                outcome, _row = run_point(cfg)
                rendered = pairs_to_tsv_bytes(outcome.pairs)
                if reference is None:
                    reference = rendered
                elif rendered != reference:
                    raise SimjoinError(
                        f"output changed at workers={w} (partial report saved)"
                    )
        else:
            for c in values:
                cfg = replace(base, algorithm="sharding", sharding_c=int(c))
                outcome, _row = run_point(cfg)
                rendered = pairs_to_tsv_bytes(outcome.pairs)
                if c == values[0]:
                    reference = rendered
                elif rendered != reference:
                    raise SimjoinError(
                        f"output changed at sharding-c={c} (partial report saved)"
                    )
    finally:
        save_report()
    return rows


def _print_sweep_table(rows: list[dict], out=None) -> None:
    out = out or sys.stdout
    header = ("value", "algorithm", "wall_time_s", "bytes_shuffled", "max_group_length", "pairs")
    print("\t".join(header), file=out)
    for row in rows:
        print("\t".join(str(row[h]) for h in header), file=out)


_RUN_OPTIONS: dict[str, tuple] = {
    # name -> (type tag, help)
    "algorithm": ("str", f"one of {', '.join(ALGORITHMS)}"),
    "input": ("str", "input TSV path (id TAB element TAB multiplicity)"),
    "output": ("str", "output TSV path (defaults to stdout)"),
    "metrics": ("str", "JSON-lines metrics path, one object per stage"),
    "measure": ("str", "similarity measure name"),
    "threshold": ("float", "similarity threshold in (0, 1]"),
    "workers": ("int", "kernel worker count"),
    "memory-budget": ("bytes", "per-worker memory budget, e.g. 64MiB"),
    "stopword-q": ("int", "drop elements shared by more than q multisets"),
    "sharding-c": ("int", "sharding cutoff on distinct elements per multiset"),
    "chunk-budget": ("bytes", "dissect hot index entries into chunks of at most this size"),
    "no-secondary-keys": ("flag", "disable kernel secondary keys"),
    "seed": ("int", "recorded in reports; reserved for seeded pipelines"),
    "hash-order": ("flag", "vcl: order elements by hash instead of frequency"),
    "force-oracle": ("flag", "override the oracle's quadratic-scan guard"),
    "emit-candidates": ("str", "debug TSV of candidate pairs with contribution counts"),
    "uni-table": ("str", "persist the joining phase's partials table as TSV"),
}


def _coerce(tag: str, text: str):
    if tag == "int":
        return int(text)
    if tag == "float":
        return float(text)
    if tag == "bytes":
        return parse_bytes(text)
    if tag == "flag":
        return _parse_bool(text)
    return text


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip().replace("_", "-")] = value.strip()
    return values


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    resolved = {}
    for name, (tag, _help) in _RUN_OPTIONS.items():
        dest = name.replace("-", "_")
        cli_value = getattr(args, dest, None)
        if tag == "flag" and cli_value is False:
            cli_value = None  # unset flags fall through to env/file
        if cli_value is not None:
            resolved[dest] = cli_value
            continue
        env_value = os.environ.get(ENV_PREFIX + dest.upper())
        if env_value is not None:
            resolved[dest] = _coerce(tag, env_value)
            continue
        if name in file_values:
            resolved[dest] = _coerce(tag, file_values[name])
    return replace(RunConfig(), **resolved)


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value option file")
    for name, (tag, help_text) in _RUN_OPTIONS.items():
        flag = f"--{name}"
        if tag == "flag":
            parser.add_argument(flag, action="store_true", default=False, help=help_text)
        else:
            parser.add_argument(flag, type=str, default=None, help=help_text)


def _typed_run_args(args: argparse.Namespace) -> None:
    # argparse collects strings; coerce typed options in place
    for name, (tag, _help) in _RUN_OPTIONS.items():
        dest = name.replace("-", "_")
        value = getattr(args, dest, None)
        if value is not None and tag not in ("str", "flag"):
            setattr(args, dest, _coerce(tag, value))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simjoin",
        description="Exact all-pairs similarity joins for sets, multisets, and vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one pipeline on one dataset")
    _add_run_options(run_p)

    sweep_p = sub.add_parser("sweep", help="benchmark sweep with cross-checks")
    _add_run_options(sweep_p)
    sweep_p.add_argument("--sweep", required=True, choices=SWEEP_KINDS)
    sweep_p.add_argument("--values", help="comma-separated sweep points")
    sweep_p.add_argument("--report", help="JSON-lines report path")

    gen_p = sub.add_parser("generate", help="write a synthetic skewed dataset")
    gen_p.add_argument("--num-multisets", type=int, required=True)
    gen_p.add_argument("--alphabet-size", type=int, required=True)
    gen_p.add_argument("--zipf", type=float, default=0.8, help="element popularity exponent")
    gen_p.add_argument("--size-zipf", type=float, default=1.2, help="multiset size exponent")
    gen_p.add_argument("--max-multiplicity", type=int, default=5)
    gen_p.add_argument("--max-underlying", type=int, default=None)
    gen_p.add_argument("--clusters", type=int, default=0, help="planted near-duplicate clusters")
    gen_p.add_argument("--cluster-size", type=int, default=3)
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--output", required=True)
    gen_p.add_argument("--clusters-out", help="JSON file of planted cluster members")

    stats_p = sub.add_parser("stats", help="dataset statistics as JSON")
    stats_p.add_argument("--input", required=True)
    stats_p.add_argument("--output", help="defaults to stdout")

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    _typed_run_args(args)
    cfg = _resolve_run_config(args)
    run(cfg)
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    _typed_run_args(args)
    cfg = _resolve_run_config(args)
    if not cfg.algorithm:
        cfg.algorithm = "online-agg"
    values = None
    if args.values:
        parse = float if args.sweep == "thresholds" else int
        values = [parse(v) for v in args.values.split(",") if v.strip()]
    rows = bench_sweep(cfg, args.sweep, values, args.report)
    _print_sweep_table(rows)
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    spec = GenSpec(
        num_multisets=args.num_multisets,
        alphabet_size=args.alphabet_size,
        zipf_exponent=args.zipf,
        size_zipf_exponent=args.size_zipf,
        max_multiplicity=args.max_multiplicity,
        seed=args.seed,
        planted_clusters=args.clusters,
        cluster_size=args.cluster_size,
        max_underlying=args.max_underlying,
    )
    dataset: GeneratedDataset = generate(spec)
    with open(args.output, "wb") as f:
        f.write(tuples_to_tsv_bytes(dataset.tuples))
    if args.clusters_out:
        clusters = [[mid.decode("utf-8") for mid in members] for members in dataset.clusters]
        with open(args.clusters_out, "w", encoding="utf-8") as f:
            json.dump({"clusters": clusters}, f, indent=2)
            f.write("\n")
    print(
        f"wrote {len(dataset.tuples)} tuples ({args.num_multisets} multisets) to {args.output}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    stats = dataset_stats(read_raw_tsv(args.input))
    stats = {
        key: ({str(k): v for k, v in value.items()} if isinstance(value, dict) else value)
        for key, value in stats.items()
    }
    rendered = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(rendered)
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "generate": _cmd_generate,
        "stats": _cmd_stats,
    }
    try:
        return handlers[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except MemoryBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEMORY_BUDGET
    except PreconditionRefused as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION_REFUSED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimjoinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
