"""Synthetic skewed datasets with planted near-duplicate clusters.

Element popularity and multiset size both follow truncated power laws, so the
generated data exhibits the hot-element and huge-multiset skew the pipelines
are built around. Generation is single-threaded and fully determined by the
seed: the same spec always yields byte-identical output.
"""

from __future__ import annotations

import bisect
import random
from collections.abc import Iterable
from dataclasses import dataclass

from .model import MultisetId, RawTuple


@dataclass(frozen=True)
class GenSpec:
    num_multisets: int
    alphabet_size: int
    zipf_exponent: float  # element popularity skew
    size_zipf_exponent: float  # underlying-cardinality skew
    max_multiplicity: int
    seed: int
    planted_clusters: int = 0
    cluster_size: int = 3
    max_underlying: int | None = None

    def __post_init__(self):
        if self.num_multisets < 0 or self.alphabet_size < 0:
            raise ValueError("counts must be non-negative")
        if self.num_multisets > 0 and self.alphabet_size == 0:
            raise ValueError("cannot draw multisets from an empty alphabet")
        if self.zipf_exponent <= 0 or self.size_zipf_exponent <= 0:
            raise ValueError("power-law exponents must be positive")
        if self.max_multiplicity < 1:
            raise ValueError("max_multiplicity must be at least 1")
        if self.planted_clusters < 0:
            raise ValueError("planted_clusters must be non-negative")
        if self.planted_clusters and self.cluster_size < 2:
            raise ValueError("clusters need at least 2 members")
        if self.planted_clusters * self.cluster_size > self.num_multisets:
            raise ValueError("clusters do not fit into num_multisets")
        if self.max_underlying is not None and self.max_underlying < 1:
            raise ValueError("max_underlying must be at least 1")


@dataclass
class GeneratedDataset:
    tuples: list[RawTuple]
    clusters: list[list[MultisetId]]


def _power_law_cumulative(n: int, exponent: float) -> list[float]:
    weights = []
    total = 0.0
    for k in range(1, n + 1):
        total += k ** -exponent
        weights.append(total)
    return weights


def _draw(cumulative: list[float], rng: random.Random) -> int:
    return bisect.bisect_left(cumulative, rng.random() * cumulative[-1])


def generate(spec: GenSpec) -> GeneratedDataset:
    rng = random.Random(spec.seed)
    if spec.num_multisets == 0:
        return GeneratedDataset([], [])
    elements = [b"e%06d" % k for k in range(spec.alphabet_size)]
    popularity = _power_law_cumulative(spec.alphabet_size, spec.zipf_exponent)
    max_size = spec.alphabet_size
    if spec.max_underlying is not None:
        max_size = min(max_size, spec.max_underlying)
    sizes = _power_law_cumulative(max_size, spec.size_zipf_exponent)

    def draw_element() -> bytes:
        return elements[_draw(popularity, rng)]

    def draw_contents() -> dict[bytes, int]:
        size = 1 + _draw(sizes, rng)
        contents: dict[bytes, int] = {}
        attempts = 0
        while len(contents) < size and attempts < 50 * size:
            e = draw_element()
            attempts += 1
            if e not in contents:
                contents[e] = rng.randint(1, spec.max_multiplicity)
        if len(contents) < size:
            # popular ranks are saturated; fill from the alphabet in order
            for e in elements:
                if len(contents) >= size:
                    break
                if e not in contents:
                    contents[e] = rng.randint(1, spec.max_multiplicity)
        return contents

    def perturb(contents: dict[bytes, int]) -> dict[bytes, int]:
        out = dict(contents)
        op = rng.randrange(3)
        if op == 0:
            return out  # exact clone
        keys = sorted(out)
        target = keys[rng.randrange(len(keys))]
        if op == 1:
            bumped = out[target] + (1 if out[target] < spec.max_multiplicity else -1)
            if 1 <= bumped <= spec.max_multiplicity:
                out[target] = bumped
        else:
            del out[target]
            for _ in range(50):
                e = draw_element()
                if e not in out:
                    out[e] = rng.randint(1, spec.max_multiplicity)
                    break
            if not out:
                out[target] = contents[target]
        return out

    def draw_cluster_seed() -> dict[bytes, int]:
        # a one-entry perturbation must leave clones clearly similar, so
        # cluster seeds need a few elements; retry small draws
        floor = min(3, max_size)
        best = draw_contents()
        for _ in range(20):
            if len(best) >= floor:
                break
            candidate = draw_contents()
            if len(candidate) > len(best):
                best = candidate
        return best

    tuples: list[RawTuple] = []
    clusters: list[list[bytes]] = []
    next_id = 0

    def emit(contents: dict[bytes, int]) -> bytes:
        nonlocal next_id
        mid = b"m%06d" % next_id
        next_id += 1
        for e, f in contents.items():
            tuples.append(RawTuple(mid, e, f))
        return mid

    for _ in range(spec.planted_clusters):
        seed_contents = draw_cluster_seed()
        members = [emit(seed_contents)]
        for _ in range(spec.cluster_size - 1):
            members.append(emit(perturb(seed_contents)))
        clusters.append(members)
    while next_id < spec.num_multisets:
        emit(draw_contents())

    tuples.sort(key=lambda t: (t.id, t.element))
    return GeneratedDataset(tuples, clusters)


def dataset_stats(raw: Iterable[RawTuple]) -> dict:
    """Counts plus the size and frequency histograms of a merged dataset."""
    per_id: dict[bytes, int] = {}
    per_element: dict[bytes, int] = {}
    tuple_count = 0
    for t in raw:
        tuple_count += 1
        per_id[t.id] = per_id.get(t.id, 0) + 1
        per_element[t.element] = per_element.get(t.element, 0) + 1
    size_hist: dict[int, int] = {}
    for size in per_id.values():
        size_hist[size] = size_hist.get(size, 0) + 1
    freq_hist: dict[int, int] = {}
    for freq in per_element.values():
        freq_hist[freq] = freq_hist.get(freq, 0) + 1
    return {
        "multisets": len(per_id),
        "elements": len(per_element),
        "tuples": tuple_count,
        "underlying_cardinality_hist": dict(sorted(size_hist.items())),
        "element_frequency_hist": dict(sorted(freq_hist.items())),
    }
