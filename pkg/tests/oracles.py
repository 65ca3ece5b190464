"""Independent brute-force oracles: direct formula transcriptions in plain
Python, sharing no code with the package under test."""

from __future__ import annotations

import math
import zlib
from fractions import Fraction


def ifd_oracle(conditioned, unconditioned):
    n = len(conditioned)
    s_cond = sum(-x for x in conditioned) / n
    s_uncond = sum(-x for x in unconditioned) / n
    return s_cond / s_uncond


def softmax_oracle(values):
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def token_oracle(raw, pre_normalized=False):
    probs = list(raw) if pre_normalized else softmax_oracle(raw)
    k = len(probs)
    best = 0
    for i in range(1, k):
        if probs[i] > probs[best]:
            best = i
    disparity = sum(abs(p - probs[best]) for p in probs) / (k - 1)
    return (best + 1) * disparity


def sent_oracle(token_scores, alpha):
    k = len(token_scores)
    avg = sum(token_scores) / k
    var = sum((s - avg) ** 2 for s in token_scores) / k
    return avg / (1.0 + alpha * math.sqrt(var))


def model_oracle(sent_scores, betas):
    total = sum(betas)
    return sum(b / total * s for b, s in zip(betas, sent_scores))


def entropy_oracle(logprobs):
    return sum(-x for x in logprobs) / math.log(2)


def less_oracle(learning_rates, train_grads, val_sets):
    """train_grads: list over checkpoints of vectors; val_sets: dict name ->
    list over checkpoints of vectors. Returns (best, per-set dict)."""

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    def norm(a):
        return math.sqrt(dot(a, a))

    per_set = {}
    for name, vals in val_sets.items():
        total = 0.0
        for eta, tg, vg in zip(learning_rates, train_grads, vals):
            total += eta * dot(vg, tg) / (norm(vg) * norm(tg))
        per_set[name] = total
    return max(per_set.values()), per_set


def hamilton_oracle(sizes, budget):
    """Exact largest-remainder apportionment with Fraction arithmetic,
    ties to the lowest cluster index, sizes as caps."""
    k = len(sizes)
    total = sum(sizes)
    assert budget <= total
    quotas = [0] * k
    remaining = budget
    active = [i for i in range(k) if sizes[i] > 0]
    while remaining > 0:
        assert active
        wtotal = sum(sizes[i] for i in active)
        shares = {i: Fraction(remaining * sizes[i], wtotal) for i in active}
        base = {i: int(shares[i]) for i in active}
        leftover = remaining - sum(base.values())
        by_rem = sorted(active, key=lambda i: (-(shares[i] - base[i]), i))
        for i in by_rem[:leftover]:
            base[i] += 1
        remaining = 0
        next_active = []
        for i in active:
            give = min(base[i], sizes[i] - quotas[i])
            quotas[i] += give
            remaining += base[i] - give
            if sizes[i] - quotas[i] > 0:
                next_active.append(i)
        active = next_active
    return quotas


def kcenter_naive(ids, vectors, initial_pool, budget):
    """Greedy max-min selection recomputed from a full pairwise distance map."""

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    by_id = dict(zip(ids, vectors))
    pool = sorted(initial_pool)
    candidates = sorted(set(ids) - set(initial_pool))
    picked = []
    for _ in range(budget):
        if not pool and not picked:
            choice = candidates[0]  # deterministic bootstrap: lowest id
        else:
            best_d, choice = None, None
            for c in candidates:
                d = min(dist(by_id[c], by_id[p]) for p in pool + picked)
                if best_d is None or d > best_d or (d == best_d and c < choice):
                    best_d, choice = d, c
        picked.append(choice)
        candidates.remove(choice)
    return picked


def kcenter_naive_matrix(ids, X, initial_pool, budget):
    """Naive n x n formulation: materialize the full pairwise distance matrix,
    then per pick recompute every candidate's min distance over the whole
    pool column set (no incremental array). ids must be ascending."""
    import numpy as np

    X = np.asarray(X, dtype=float)
    n = len(ids)
    dists = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    index = {rid: i for i, rid in enumerate(ids)}
    pool_idx = [index[r] for r in sorted(initial_pool)]
    cand_idx = [i for i in range(n) if ids[i] not in initial_pool]
    picked = []
    for _ in range(budget):
        if not pool_idx and not picked:
            choice = cand_idx[0]
        else:
            cols = pool_idx + picked
            mins = dists[np.ix_(cand_idx, cols)].min(axis=1)
            choice = cand_idx[int(np.argmax(mins))]  # ids ascending: first max = lowest id
        picked.append(choice)
        cand_idx.remove(choice)
    return [ids[i] for i in picked]


def deflate_ratio_oracle(data: bytes, level: int = 6) -> float:
    comp = zlib.compressobj(level, zlib.DEFLATED, -15)
    compressed = comp.compress(data) + comp.flush()
    return len(data) / len(compressed)


def zip_first_round_oracle(blobs_by_id: dict[int, bytes], k1: int, k2: int, k3: int):
    """First outer round of the staged compression selection, recomputed
    exhaustively with no shared state or context windows."""
    ratios = {rid: deflate_ratio_oracle(raw) for rid, raw in blobs_by_id.items()}
    pool1 = sorted(blobs_by_id, key=lambda r: (ratios[r], r))[:k1]
    # selected set is empty in round one, so rescoring equals the sample ratio
    rescored = sorted(pool1, key=lambda r: (deflate_ratio_oracle(blobs_by_id[r]), r))[:k2]
    picks = []
    local = b""
    remaining = list(rescored)
    for _ in range(k3):
        scored = sorted(
            ((deflate_ratio_oracle(local + blobs_by_id[r]), r) for r in remaining)
        )
        _, best = scored[0]
        remaining.remove(best)
        picks.append(best)
        local += blobs_by_id[best]
    return picks
