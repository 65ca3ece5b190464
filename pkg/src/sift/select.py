"""Subset construction: cluster quotas, score/length ranking, random baselines,
compression and coverage selection, and manifest emission.

Every selector here is deterministic given its inputs and seed, breaks ties
toward the lowest record id (or lowest cluster index), and emits a
SelectionManifest that reruns byte-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import Record, serialize
from .diversity import ClusterAssignment, ZipSelection, kcenter_select, zip_select
from .errors import ManifestError, SelectionError, SiftError
from .manifest import SelectionManifest
from .scores import EmbeddingMatrix, ScoreTable, DIRECTION_HIGH, DIRECTION_LOW
from .util import atomic_write_bytes, atomic_write_text, blake2b_hex, canonical_json, id_to_hex

PRNG_NAME = "numpy.random.PCG64"


@dataclass
class SelectionContext:
    """Facts about the run that belong in the manifest but not in the math."""

    corpus_digest: str = ""
    corpus_count: int = 0
    inputs: list[dict] = field(default_factory=list)
    excluded: dict = field(default_factory=dict)
    token_counter: str | None = None


# ---------------------------------------------------------------------------
# quotas


def quota_allocate(sizes: list[int], budget: int, weights: list[int] | None = None) -> list[int]:
    """Largest-remainder apportionment of ``budget`` proportional to ``sizes``.

    Exact integer arithmetic throughout: floor of each proportional share,
    then one unit to each of the largest remainders, ties to the lowest
    cluster index. No quota may exceed its cluster size; any overflow is
    redistributed by repeating the procedure over clusters with headroom
    (at most len(sizes)+1 rounds before erroring).

    ``weights`` overrides the proportionality basis (uniform allocation
    passes all-ones) while sizes keep acting as caps.
    """
    k = len(sizes)
    if any(s < 0 for s in sizes):
        raise SelectionError("cluster sizes must be non-negative")
    total = sum(sizes)
    if budget > total:
        raise SelectionError(f"budget {budget} exceeds total usable size {total}")
    if weights is None:
        weights = sizes
    elif len(weights) != k or any(w < 0 for w in weights):
        raise SelectionError("weights must be non-negative, one per cluster")

    quotas = [0] * k
    remaining = budget
    active = [i for i in range(k) if sizes[i] > 0]
    rounds = 0
    while remaining > 0:
        rounds += 1
        if rounds > k + 1 or not active:
            raise SelectionError("quota redistribution failed to converge")
        w = [weights[i] for i in active]
        wtotal = sum(w)
        if wtotal == 0:
            w = [1] * len(active)
            wtotal = len(active)
        base = [remaining * wi // wtotal for wi in w]
        rem = [remaining * wi - bi * wtotal for wi, bi in zip(w, base)]
        leftover = remaining - sum(base)
        order = sorted(range(len(active)), key=lambda j: (-rem[j], active[j]))
        for j in order[:leftover]:
            base[j] += 1
        remaining = 0
        still_active = []
        for j, i in enumerate(active):
            headroom = sizes[i] - quotas[i]
            award = min(base[j], headroom)
            quotas[i] += award
            remaining += base[j] - award
            if sizes[i] - quotas[i] > 0:
                still_active.append(i)
        active = still_active
    return quotas


def _rank_key(direction: str):
    if direction == DIRECTION_HIGH:
        return lambda item: (-item[1], item[0])
    if direction == DIRECTION_LOW:
        return lambda item: (item[1], item[0])
    raise SiftError(f"unknown direction: {direction!r}")


def _clustered_rank(
    values: dict[int, float],
    assignment: ClusterAssignment,
    budget: int,
    direction: str,
    uniform: bool,
) -> tuple[list[int], list[dict]]:
    members: dict[int, list[tuple[int, float]]] = {c: [] for c in range(assignment.k)}
    for rid, value in values.items():
        members[assignment.label_of(rid)].append((rid, value))
    sizes = [len(members[c]) for c in range(assignment.k)]
    weights = [1] * assignment.k if uniform else None
    quotas = quota_allocate(sizes, budget, weights=weights)
    key = _rank_key(direction)
    picked: list[int] = []
    table: list[dict] = []
    for c in range(assignment.k):
        ranked = sorted(members[c], key=key)
        picked.extend(rid for rid, _ in ranked[: quotas[c]])
        table.append({"cluster": c, "size": sizes[c], "quota": quotas[c]})
    return picked, table


def _global_rank(values: dict[int, float], budget: int, direction: str) -> list[int]:
    key = _rank_key(direction)
    ranked = sorted(values.items(), key=key)
    return [rid for rid, _ in ranked[:budget]]


def _budget_check(budget: int, usable: int, ctx: SelectionContext) -> tuple[int, int]:
    """Effective budget and shortfall. Budget beyond the whole corpus is an error;
    a smaller usable pool (exclusions) just records the shortfall."""
    corpus_n = ctx.corpus_count or usable
    if budget > corpus_n:
        raise SelectionError(f"budget {budget} exceeds corpus size {corpus_n}")
    if budget > usable:
        return usable, budget - usable
    return budget, 0


def select_top_by_score(
    scores: ScoreTable,
    budget: int,
    ctx: SelectionContext,
    assignment: ClusterAssignment | None = None,
    direction: str | None = None,
    uniform_quotas: bool = False,
    extra_params: dict | None = None,
) -> SelectionManifest:
    """Top-scoring records, globally or per cluster under proportional quotas."""
    direction = direction or scores.direction
    values = dict(scores.entries)
    if assignment is not None:
        known = assignment.ids_set()
        dropped = [rid for rid in values if rid not in known]
        for rid in dropped:
            del values[rid]
        if dropped:
            ctx.excluded = {**ctx.excluded, "unclustered": len(dropped)}
    if not values:
        raise SelectionError("no usable scored records to select from")
    take, shortfall = _budget_check(budget, len(values), ctx)
    if assignment is not None:
        picked, quota_table = _clustered_rank(values, assignment, take, direction, uniform_quotas)
    else:
        picked, quota_table = _global_rank(values, take, direction), None
    method = "top-km" if assignment is not None else "top"
    params = {
        "score_method": scores.method,
        "direction": direction,
        "uniform_quotas": uniform_quotas,
        **(scores.params or {}),
        **(extra_params or {}),
    }
    return SelectionManifest(
        method=method,
        parameters=params,
        seed=None,
        corpus_digest=ctx.corpus_digest,
        corpus_count=ctx.corpus_count or len(scores.entries),
        selected_ids=picked,
        budget=budget,
        quotas=quota_table,
        inputs=ctx.inputs,
        excluded=ctx.excluded,
        shortfall=shortfall,
        token_counter=ctx.token_counter,
    )


def select_by_length(
    token_counts: dict[int, int],
    budget: int,
    ctx: SelectionContext,
    assignment: ClusterAssignment | None = None,
    uniform_quotas: bool = False,
) -> SelectionManifest:
    """Longest records first, under the same quota machinery as score selection."""
    values = {rid: float(c) for rid, c in token_counts.items()}
    if assignment is not None:
        known = assignment.ids_set()
        values = {rid: v for rid, v in values.items() if rid in known}
    if not values:
        raise SelectionError("no usable records with token counts")
    take, shortfall = _budget_check(budget, len(values), ctx)
    if assignment is not None:
        picked, quota_table = _clustered_rank(values, assignment, take, DIRECTION_HIGH, uniform_quotas)
        method = "length-km"
    else:
        picked, quota_table = _global_rank(values, take, DIRECTION_HIGH), None
        method = "length"
    return SelectionManifest(
        method=method,
        parameters={"uniform_quotas": uniform_quotas},
        seed=None,
        corpus_digest=ctx.corpus_digest,
        corpus_count=ctx.corpus_count or len(token_counts),
        selected_ids=picked,
        budget=budget,
        quotas=quota_table,
        inputs=ctx.inputs,
        excluded=ctx.excluded,
        shortfall=shortfall,
        token_counter=ctx.token_counter,
    )


# ---------------------------------------------------------------------------
# random baseline


def reservoir_sample(ids: Iterable[int], budget: int, rng: np.random.Generator) -> tuple[list[int], int]:
    """Uniform sample without replacement in one pass (skip-ahead reservoir).

    Returns the sample ordered by stream position, plus the stream length.
    Deterministic given the stream and generator state.
    """
    slots: list[tuple[int, int]] = []  # (position, id)
    n = 0
    it = iter(ids)
    for item in it:
        slots.append((n, item))
        n += 1
        if n == budget:
            break
    if n < budget:
        return [rid for _, rid in slots], n

    def _log_u() -> float:
        u = float(rng.random())
        return math.log(u if u > 0.0 else 5e-324)

    w = math.exp(_log_u() / budget)
    skip = int(math.floor(_log_u() / math.log1p(-w)))
    for item in it:
        if skip > 0:
            skip -= 1
            n += 1
            continue
        slots[int(rng.integers(budget))] = (n, item)
        n += 1
        w *= math.exp(_log_u() / budget)
        skip = int(math.floor(_log_u() / math.log1p(-w)))
    slots.sort()
    return [rid for _, rid in slots], n


def random_select(
    ids: Iterable[int],
    budget: int,
    seed: int,
    ctx: SelectionContext | None = None,
) -> SelectionManifest:
    """Seeded uniform baseline; identical (seed, corpus digest) reruns are identical."""
    ctx = ctx or SelectionContext()
    rng = np.random.Generator(np.random.PCG64(seed))
    picked, n = reservoir_sample(ids, budget, rng)
    if budget > n:
        raise SelectionError(f"budget {budget} exceeds corpus size {n}")
    return SelectionManifest(
        method="random",
        parameters={},
        seed=seed,
        corpus_digest=ctx.corpus_digest,
        corpus_count=ctx.corpus_count or n,
        selected_ids=picked,
        budget=budget,
        inputs=ctx.inputs,
        excluded=ctx.excluded,
        shortfall=0,
        prng=PRNG_NAME,
        token_counter=ctx.token_counter,
    )


# ---------------------------------------------------------------------------
# diversity-backed selectors wrapped into manifests


def select_kcenter(
    embeddings: EmbeddingMatrix,
    budget: int,
    ctx: SelectionContext,
    initial_pool: set[int] | None = None,
    candidates: set[int] | None = None,
    debug: bool = False,
) -> SelectionManifest:
    initial_pool = initial_pool or set()
    if candidates is None:
        candidates = embeddings.ids_set() - initial_pool
    take, shortfall = _budget_check(budget, len(candidates), ctx)
    picked = kcenter_select(embeddings, initial_pool, candidates, take, debug=debug)
    return SelectionManifest(
        method="kcenter",
        parameters={"initial_pool_size": len(initial_pool), "metric": "euclidean"},
        seed=None,
        corpus_digest=ctx.corpus_digest,
        corpus_count=ctx.corpus_count or len(embeddings),
        selected_ids=picked,
        budget=budget,
        inputs=ctx.inputs,
        excluded=ctx.excluded,
        shortfall=shortfall,
        token_counter=ctx.token_counter,
    )


def select_zip(
    records: list[Record],
    budget: int,
    ctx: SelectionContext,
    k1: int | None = None,
    k2: int | None = None,
    k3: int | None = None,
    window_bytes: int | None = None,
    exact: bool = False,
) -> SelectionManifest:
    kwargs = {}
    if k1 is not None:
        kwargs["k1"] = k1
    if k2 is not None:
        kwargs["k2"] = k2
    if k3 is not None:
        kwargs["k3"] = k3
    if exact:
        kwargs["window_bytes"] = None
    elif window_bytes is not None:
        kwargs["window_bytes"] = window_bytes
    result: ZipSelection = zip_select(records, budget, **kwargs)
    params = dict(result.params)
    params["selected_set_digest"] = result.state.digest
    params["selected_set_ratio"] = result.state.selected_ratio()
    return SelectionManifest(
        method="zip",
        parameters=params,
        seed=None,
        corpus_digest=ctx.corpus_digest,
        corpus_count=ctx.corpus_count or len(records),
        selected_ids=result.ids,
        budget=budget,
        inputs=ctx.inputs,
        excluded=ctx.excluded,
        token_counter=ctx.token_counter,
    )


# ---------------------------------------------------------------------------
# export


def export_subset(
    manifest: SelectionManifest,
    records: Iterable[Record],
    out_path: str | Path,
    fmt: str = "conversation",
) -> str:
    """Write the selected records, in manifest order, in the input schema.

    Emits a sidecar ``<out>.digest`` with the output file digest. Raises when
    a manifest id never shows up in the corpus stream.
    """
    wanted = set(manifest.selected_ids)
    lines: dict[int, str] = {}
    for record in records:
        if record.id in wanted and record.id not in lines:
            lines[record.id] = serialize(record, fmt=fmt)
            if len(lines) == len(wanted):
                break
    missing = wanted - set(lines)
    if missing:
        shown = id_to_hex(sorted(missing)[0])
        raise ManifestError(
            f"{len(missing)} manifest id(s) not found in corpus (first: {shown})"
        )
    payload = "".join(lines[rid] + "\n" for rid in manifest.selected_ids).encode("utf-8")
    atomic_write_bytes(out_path, payload)
    digest = blake2b_hex(payload)
    sidecar = canonical_json({"algo": "blake2b-128", "bytes": len(payload), "digest": digest})
    atomic_write_text(str(out_path) + ".digest", sidecar + "\n")
    return digest
