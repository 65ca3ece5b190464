"""Diversity-driven selection: k-means clustering, greedy k-center, and
compression-ratio (zip) selection.

All three are deterministic: k-means is seeded and breaks ties toward the
lowest centroid index / record id, k-center and zip break every tie toward
the lowest record id, and the compressor is pinned (DEFLATE, level 6, fixed
window) so ratios are bit-reproducible across runs and platforms.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Record, canonical_bytes
from .errors import ScoreFormatError, SelectionError, SiftError
from .scores import KIND_ASSIGNMENT, EmbeddingMatrix, read_container, write_container

log = logging.getLogger(__name__)

DEFLATE_LEVEL = 6
DEFLATE_WBITS = -15  # raw DEFLATE stream, fixed 32 KiB window

DEFAULT_K1 = 10_000
DEFAULT_K2 = 1_000
DEFAULT_K3 = 100  # selector appends 100 records per outer round
DEFAULT_CONTEXT_WINDOW = 1 << 20  # bytes of selected-set context kept for rescoring


# ---------------------------------------------------------------------------
# k-means


@dataclass
class ClusterAssignment:
    k: int
    ids: np.ndarray          # (n,) uint64 ascending
    labels: np.ndarray       # (n,) uint32, dense in [0, k)
    centroids: np.ndarray    # (k, d) float64
    inertia: float
    seed: int
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._index = {int(i): k for k, i in enumerate(self.ids.tolist())}

    def label_of(self, record_id: int) -> int:
        return int(self.labels[self._index[record_id]])

    def ids_set(self) -> set[int]:
        return set(self._index)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def save_assignment(path: str | Path, assignment: ClusterAssignment) -> None:
    header = {
        "k": assignment.k,
        "dim": int(assignment.centroids.shape[1]),
        "seed": assignment.seed,
        "iterations": assignment.iterations_run,
        "inertia": assignment.inertia,
    }
    rows = np.zeros(len(assignment.ids), dtype=np.dtype([("id", "<u8"), ("label", "<u4")]))
    rows["id"] = assignment.ids
    rows["label"] = assignment.labels
    payload = (
        struct.pack("<Q", len(assignment.ids))
        + rows.tobytes()
        + assignment.centroids.astype("<f8").tobytes()
    )
    write_container(path, KIND_ASSIGNMENT, header, payload)


def load_assignment(path: str | Path) -> ClusterAssignment:
    kind, header, payload = read_container(path)
    if kind != KIND_ASSIGNMENT:
        raise ScoreFormatError(f"{path}: container holds {kind}, expected cluster_assignment")
    k, dim = int(header["k"]), int(header["dim"])
    (n,) = struct.unpack_from("<Q", payload, 0)
    rows = np.frombuffer(payload, dtype=np.dtype([("id", "<u8"), ("label", "<u4")]), count=n, offset=8)
    centroids = np.frombuffer(payload, dtype="<f8", count=k * dim, offset=8 + rows.nbytes).reshape(k, dim)
    labels = rows["label"].astype(np.uint32)
    if n and (labels.max() >= k or len(np.unique(labels)) != k):
        raise ScoreFormatError(f"{path}: cluster labels are not dense in [0, {k})")
    return ClusterAssignment(
        k=k,
        ids=rows["id"].astype(np.uint64),
        labels=labels,
        centroids=centroids.copy(),
        inertia=float(header.get("inertia", 0.0)),
        seed=int(header.get("seed", 0)),
        iterations_run=int(header.get("iterations", 0)),
    )


def _pairwise_sq_dists(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    # |x - c|^2 = |x|^2 - 2 x.c + |c|^2, computed blockwise by the callers
    d = x_sq[:, None] - 2.0 * (X @ C.T) + np.sum(C * C, axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _assign(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray, chunk: int = 0):
    if not chunk:
        # keep each distance block around 64 MiB
        chunk = max(256, int(8e6 / max(len(C), 1)))
    n = len(X)
    labels = np.empty(n, dtype=np.uint32)
    min_d = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d = _pairwise_sq_dists(X[lo:hi], C, x_sq[lo:hi])
        labels[lo:hi] = np.argmin(d, axis=1)  # ties -> lowest centroid index
        # distance to the winner recomputed by direct subtraction: the norm
        # expansion leaves ~1e-11 residue, which must be exactly 0 when a
        # point sits on its centroid (k = n case)
        diff = X[lo:hi] - C[labels[lo:hi]]
        min_d[lo:hi] = np.sum(diff * diff, axis=1)
    return labels, min_d


def _kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    x_sq = np.sum(X * X, axis=1)
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    closest = x_sq - 2.0 * (X @ centroids[0]) + centroids[0] @ centroids[0]
    np.maximum(closest, 0.0, out=closest)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass is on duplicate points; fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = X[idx]
        d = x_sq - 2.0 * (X @ centroids[j]) + centroids[j] @ centroids[j]
        np.maximum(d, 0.0, out=d)
        np.minimum(closest, d, out=closest)
    return centroids


def kmeans(
    embeddings: EmbeddingMatrix,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-4,
) -> ClusterAssignment:
    """Seeded k-means++ plus Lloyd iterations over raw embedding vectors.

    Stops when the relative per-coordinate RMS centroid shift drops below
    ``tol`` or after ``max_iters``. Empty clusters are repaired by stealing
    the point currently farthest from its centroid (ties to lowest id), which
    keeps the recorded inertia sequence non-increasing. Rows are processed in
    ascending-id order, so results do not depend on input file order.
    """
    X = embeddings.matrix
    n = len(X)
    if k < 1 or k > n:
        raise SelectionError(f"k must be in [1, {n}], got {k}")
    if X.shape[1] < 1:
        raise SiftError("embeddings must have at least one dimension")
    rng = np.random.default_rng(seed)
    x_sq = np.sum(X * X, axis=1)
    C = _kmeans_plusplus(X, k, rng)

    history: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        labels, min_d = _assign(X, C, x_sq)
        inertia = float(min_d.sum())
        if history:
            # Lloyd guarantees monotone inertia; allow only FP slack.
            assert inertia <= history[-1] * (1 + 1e-12) + 1e-12, "inertia increased"
        history.append(inertia)

        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if len(empties):
            order = np.argsort(-min_d, kind="stable")  # farthest first, ties lowest id
            taken = 0
            for empty in empties:
                while counts[labels[order[taken]]] <= 1:
                    taken += 1  # never empty a singleton donor
                victim = order[taken]
                counts[labels[victim]] -= 1
                labels[victim] = empty
                counts[empty] = 1
                min_d[victim] = 0.0
                taken += 1

        new_C = np.zeros_like(C)
        np.add.at(new_C, labels, X)
        new_C /= np.maximum(counts, 1)[:, None]

        shift_rms = float(np.sqrt(np.mean((new_C - C) ** 2)))
        scale = float(np.sqrt(np.mean(C**2)))
        C = new_C
        if shift_rms <= tol * max(scale, 1e-12):
            break

    # Final consolidation: assign against the final centroids so every label is
    # the nearest centroid, repairing any empty cluster by stealing the point
    # farthest from its centroid and pinning the empty centroid onto it.
    # Duplicate points can tie-cycle (ties re-empty the higher twin cluster),
    # so iterate until the post-repair labelling stabilizes.
    prev = None
    for _ in range(k + 1):
        labels, min_d = _assign(X, C, x_sq)
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if len(empties):
            order = np.argsort(-min_d, kind="stable")
            taken = 0
            for empty in empties:
                while counts[labels[order[taken]]] <= 1:
                    taken += 1
                victim = order[taken]
                counts[labels[victim]] -= 1
                labels[victim] = empty
                counts[empty] = 1
                C[empty] = X[victim]
                min_d[victim] = 0.0
                taken += 1
        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels.copy()
        if not len(empties):
            break
    inertia = float(min_d.sum())
    history.append(inertia)
    return ClusterAssignment(
        k=k,
        ids=embeddings.ids.copy(),
        labels=labels,
        centroids=C,
        inertia=inertia,
        seed=seed,
        iterations_run=iterations,
        inertia_history=history,
    )


# ---------------------------------------------------------------------------
# greedy k-center


def kcenter_select(
    embeddings: EmbeddingMatrix,
    initial_pool: set[int],
    candidates: set[int],
    budget: int,
    debug: bool = False,
) -> list[int]:
    """Greedy max-min coverage: repeatedly pick the candidate farthest from the pool.

    Maintains one min-distance value per candidate, updated after each pick
    against the newly picked point only, so memory stays O(n) instead of an
    n x n matrix. Euclidean distance; ties go to the lowest record id.
    ``debug`` recomputes all min-distances from scratch after every pick and
    asserts the greedy invariant, for replay-style verification.
    """
    if initial_pool & candidates:
        raise SelectionError("initial pool and candidates must be disjoint")
    if budget > len(candidates):
        raise SelectionError(f"budget {budget} exceeds {len(candidates)} candidates")
    known = embeddings.ids_set()
    for rid in (initial_pool | candidates) - known:
        raise SelectionError(f"no embedding for record {rid:016x}")

    cand_ids = sorted(candidates)  # ascending id: np.argmax ties resolve to lowest id
    cand_X = np.stack([embeddings.row(r) for r in cand_ids]) if cand_ids else np.zeros((0, embeddings.dim))
    cand_sq = np.sum(cand_X * cand_X, axis=1)

    def dists_to(point: np.ndarray) -> np.ndarray:
        d = cand_sq - 2.0 * (cand_X @ point) + point @ point
        np.maximum(d, 0.0, out=d)
        return d

    if initial_pool:
        min_d = np.full(len(cand_ids), np.inf)
        for rid in sorted(initial_pool):
            np.minimum(min_d, dists_to(embeddings.row(rid)), out=min_d)
        pool_rows = [embeddings.row(r) for r in sorted(initial_pool)]
    else:
        min_d = None
        pool_rows = []

    picked: list[int] = []
    picked_rows: list[np.ndarray] = []
    alive = np.ones(len(cand_ids), dtype=bool)
    for _ in range(budget):
        if min_d is None:
            idx = 0  # deterministic bootstrap: lowest-id candidate
        else:
            masked = np.where(alive, min_d, -np.inf)
            idx = int(np.argmax(masked))
        point = cand_X[idx]
        picked.append(cand_ids[idx])
        picked_rows.append(point)
        alive[idx] = False
        d = dists_to(point)
        if min_d is None:
            min_d = d
        else:
            np.minimum(min_d, d, out=min_d)

        if debug:
            _assert_greedy_invariant(cand_X, cand_sq, alive, idx, pool_rows + picked_rows[:-1] or None, point)
    return picked


def _assert_greedy_invariant(cand_X, cand_sq, alive, picked_idx, pool_rows, picked_point):
    """Recompute min-distances from scratch and check the pick dominated the rest."""
    if pool_rows is None:
        return  # bootstrap pick has no pool to measure against
    fresh = np.full(len(cand_X), np.inf)
    for row in pool_rows:
        d = cand_sq - 2.0 * (cand_X @ row) + row @ row
        np.minimum(fresh, np.maximum(d, 0.0), out=fresh)
    picked_d = fresh[picked_idx]
    rest = fresh[alive]
    assert not len(rest) or picked_d >= rest.max() - 1e-9, "picked candidate was not max-min"


# ---------------------------------------------------------------------------
# compression ratio


def compress_size(data: bytes, level: int = DEFLATE_LEVEL) -> int:
    comp = zlib.compressobj(level, zlib.DEFLATED, DEFLATE_WBITS)
    return len(comp.compress(data)) + len(comp.flush())


def compression_ratio(data: bytes, level: int = DEFLATE_LEVEL) -> float:
    """Raw bits over compressed bits; high means redundant, floor ~0.1 for tiny inputs."""
    if not data:
        raise SiftError("cannot compute the compression ratio of empty input")
    return len(data) / compress_size(data, level)


@dataclass
class CompressionState:
    """Running state of a compression-guided selection.

    Tracks the selected-set byte concatenation as a digest plus a bounded
    trailing window used as compression context, and the per-record sample
    ratios that seed each round. ``window_bytes=None`` keeps the entire
    concatenation (exact mode, for oracle tests).
    """

    level: int = DEFLATE_LEVEL
    window_bytes: int | None = DEFAULT_CONTEXT_WINDOW
    compressor: str = "deflate"
    sample_ratios: dict[int, float] = field(default_factory=dict)
    selected_raw_len: int = 0

    def __post_init__(self):
        self._window = b""
        self._digest = hashlib.blake2b(digest_size=16)

    @property
    def digest(self) -> str:
        return self._digest.hexdigest()

    @property
    def context(self) -> bytes:
        return self._window

    def ratio_with(self, sample: bytes) -> float:
        """Compression ratio of (selected-set context + sample)."""
        return compression_ratio(self._window + sample, self.level)

    def selected_ratio(self) -> float:
        if not self._window:
            return 1.0
        return compression_ratio(self._window, self.level)

    def add(self, sample: bytes) -> None:
        self._digest.update(sample)
        self.selected_raw_len += len(sample)
        self._window += sample
        if self.window_bytes is not None and len(self._window) > self.window_bytes:
            self._window = self._window[-self.window_bytes :]


@dataclass
class ZipSelection:
    ids: list[int]
    state: CompressionState
    rounds: int
    params: dict


def zip_select(
    records: list[Record],
    budget: int,
    k1: int = DEFAULT_K1,
    k2: int = DEFAULT_K2,
    k3: int = DEFAULT_K3,
    level: int = DEFLATE_LEVEL,
    window_bytes: int | None = DEFAULT_CONTEXT_WINDOW,
) -> ZipSelection:
    """Staged greedy selection of the least-compressible records.

    Seeds a per-record score table with each record's own compression ratio,
    then repeats until the budget is filled:

      1. take the k1 unselected records with the lowest current score;
      2. rescore those k1 as the ratio of (selected-set context + record),
         persist the updated scores, and keep the k2 lowest;
      3. grow a fresh local set by k3 greedy picks, each minimizing the ratio
         of (local set + record), and append it to the selection.

    Record bytes are the canonical turn serialization; every tie breaks to
    the lowest id, so output is independent of input order.
    """
    if not 1 <= k3 <= k2 <= k1:
        raise SelectionError(f"stage sizes must satisfy 1 <= k3 <= k2 <= k1, got {k1}, {k2}, {k3}")
    by_id: dict[int, bytes] = {}
    for record in records:
        if record.id not in by_id:
            by_id[record.id] = canonical_bytes(record.turns)
    if budget > len(by_id):
        raise SelectionError(f"budget {budget} exceeds {len(by_id)} distinct records")
    for rid, raw in by_id.items():
        if not raw:
            raise SelectionError(f"record {rid:016x} serializes to zero bytes")
    state = CompressionState(level=level, window_bytes=window_bytes)
    state.sample_ratios = {rid: compression_ratio(raw, level) for rid, raw in by_id.items()}

    unselected = set(by_id)
    selected: list[int] = []
    rounds = 0
    while len(selected) < budget:
        rounds += 1
        want = budget - len(selected)
        pool1 = heapq.nsmallest(
            min(k1, len(unselected)), unselected, key=lambda r: (state.sample_ratios[r], r)
        )
        rescored: list[tuple[float, int]] = []
        for rid in pool1:
            ratio = state.ratio_with(by_id[rid])
            state.sample_ratios[rid] = ratio
            rescored.append((ratio, rid))
        rescored.sort()
        pool2 = [rid for _, rid in rescored[: min(k2, len(rescored))]]

        local = b""
        picks: list[int] = []
        remaining = list(pool2)
        for _ in range(min(k3, len(pool2), want)):
            best = min(remaining, key=lambda r: (compression_ratio(local + by_id[r], level), r))
            remaining.remove(best)
            picks.append(best)
            local += by_id[best]

        for rid in picks:
            state.add(by_id[rid])
            unselected.discard(rid)
        selected.extend(picks)
        log.info(
            "zip round %d: +%d records (total %d/%d), selected-set ratio %.3f",
            rounds, len(picks), len(selected), budget, state.selected_ratio(),
        )
    return ZipSelection(
        ids=selected,
        state=state,
        rounds=rounds,
        params={
            "k1": k1,
            "k2": k2,
            "k3": k3,
            "level": level,
            "window_bytes": window_bytes,
            "compressor": state.compressor,
        },
    )
