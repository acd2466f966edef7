"""Shared test utilities: independent reference formulas and dataset helpers.

The reference similarity implementations deliberately scan the whole joint
alphabet with the textbook formulas; they share nothing with the measure
decomposition they are used to verify.
"""

from __future__ import annotations

import math
import random

from simjoin import (
    KernelConfig,
    RawTuple,
    ShardingConfig,
    assemble_multisets,
    lookup_join,
    online_aggregation_join,
    run_similarity_phase,
    sharding_join,
)


def textbook_similarity(name: str, mi: dict, mj: dict) -> float:
    """Whole-alphabet-scan evaluation of each measure's textbook formula."""
    alphabet = set(mi) | set(mj)
    fi = {a: mi.get(a, 0) for a in alphabet}
    fj = {a: mj.get(a, 0) for a in alphabet}
    if name == "ruzicka":
        num = sum(min(fi[a], fj[a]) for a in alphabet)
        den = sum(max(fi[a], fj[a]) for a in alphabet)
        return num / den
    if name == "jaccard":
        si = {a for a in alphabet if fi[a] > 0}
        sj = {a for a in alphabet if fj[a] > 0}
        return len(si & sj) / len(si | sj)
    if name == "dice":
        num = 2 * sum(min(fi[a], fj[a]) for a in alphabet)
        return num / (sum(fi.values()) + sum(fj.values()))
    if name == "cosine-multiset":
        num = sum(min(fi[a], fj[a]) for a in alphabet)
        return num / (math.sqrt(sum(fi.values())) * math.sqrt(sum(fj.values())))
    if name == "cosine-vector":
        num = sum(fi[a] * fj[a] for a in alphabet)
        ni = math.sqrt(sum(f * f for f in fi.values()))
        nj = math.sqrt(sum(f * f for f in fj.values()))
        return num / (ni * nj)
    raise ValueError(name)


def random_multiset(rng: random.Random, alphabet: list[bytes], max_size=8, max_mult=9) -> dict:
    size = rng.randint(1, max_size)
    chosen = rng.sample(alphabet, min(size, len(alphabet)))
    return {e: rng.randint(1, max_mult) for e in chosen}


def tuples_from_contents(contents: dict[bytes, dict[bytes, int]]) -> list[RawTuple]:
    out = []
    for mid, elements in contents.items():
        for e, f in elements.items():
            out.append(RawTuple(mid, e, f))
    out.sort(key=lambda t: (t.id, t.element))
    return out


def random_dataset(rng: random.Random, n: int, alphabet_size=12, max_size=6, max_mult=5):
    alphabet = [b"e%02d" % k for k in range(alphabet_size)]
    contents = {
        b"m%04d" % i: random_multiset(rng, alphabet, max_size, max_mult) for i in range(n)
    }
    return tuples_from_contents(contents)


JOINERS = {
    "online-agg": lambda raw, measure, config: online_aggregation_join(raw, measure, config),
    "lookup": lambda raw, measure, config: lookup_join(raw, measure, config),
    "sharding": lambda raw, measure, config: sharding_join(
        raw, measure, ShardingConfig(2), config
    ),
}


def engine_pairs(raw, algorithm, measure, threshold, config=None, **sim_kwargs):
    """Full joining + similarity pipeline, returning sorted pairs."""
    config = config or KernelConfig(worker_count=2)
    join = JOINERS[algorithm](raw, measure, config)
    return run_similarity_phase(join.joined, measure, threshold, config, **sim_kwargs).pairs


def joined_key(jt):
    return (jt.id, jt.element, jt.uni, jt.multiplicity)


def pairs_as_dict(pairs):
    return {(p.left, p.right): p.similarity for p in pairs}


def multisets_from_raw(raw):
    return {mid: dict(m.elements) for mid, m in assemble_multisets(raw).items()}
