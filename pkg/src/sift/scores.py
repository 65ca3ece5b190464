"""Score-file formats: the only channel through which model outputs reach the engine.

Each store has two physical encodings carrying identical logical content:

  text    one JSON object per line; the first line is a header
          {"format": ..., "version": 1, ...}, each row carries the record id
          as a 16-hex-digit string. Human-debuggable.
  binary  little-endian columnar layout starting with magic b"SIFTSCOR",
          a u16 version, a u8 kind tag, and a JSON header; used for arrays at
          scale. The layout is documented byte-exactly in docs/formats.md.

Loaders sniff the encoding from the first 8 bytes and fully validate every
type invariant before returning, reporting the offending record id and field.
All log-probabilities are stored in natural log.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CoverageError, ScoreFormatError
from .util import atomic_write_bytes, file_digest, hex_to_id, id_to_hex

MAGIC = b"SIFTSCOR"
VERSION = 1

KIND_SCORE_TABLE = "score_table"
KIND_LOGPROBS = "logprobs"
KIND_RATING_PROBES = "rating_probes"
KIND_GRADIENT_FEATURES = "gradient_features"
KIND_EMBEDDINGS = "embeddings"
KIND_ASSIGNMENT = "cluster_assignment"

_KIND_CODES = {
    KIND_SCORE_TABLE: 0,
    KIND_LOGPROBS: 1,
    KIND_RATING_PROBES: 2,
    KIND_GRADIENT_FEATURES: 3,
    KIND_EMBEDDINGS: 4,
    KIND_ASSIGNMENT: 5,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

DIRECTION_HIGH = "high"
DIRECTION_LOW = "low"


# ---------------------------------------------------------------------------
# container primitives


def write_container(path: str | Path, kind: str, header: dict, payload: bytes) -> None:
    """Binary container: MAGIC + u16 version + u8 kind + u32 header_len + header + payload."""
    head = dict(header)
    head["format"] = kind
    head["version"] = VERSION
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<HBI", VERSION, _KIND_CODES[kind], len(raw)) + raw + payload
    atomic_write_bytes(path, blob)


def read_container(path: str | Path) -> tuple[str, dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 15 or blob[:8] != MAGIC:
        raise ScoreFormatError(f"{path}: not a sift binary container")
    version, code, header_len = struct.unpack_from("<HBI", blob, 8)
    if version != VERSION:
        raise ScoreFormatError(f"{path}: unsupported container version {version}")
    if code not in _CODE_KINDS:
        raise ScoreFormatError(f"{path}: unknown container kind {code}")
    header = json.loads(blob[15 : 15 + header_len].decode("utf-8"))
    return _CODE_KINDS[code], header, blob[15 + header_len :]


def _is_binary(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == MAGIC


def _read_text(path: str | Path, expect: str) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ScoreFormatError(f"{path}: empty score file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ScoreFormatError(f"{path}: bad header line: {exc}") from exc
    if header.get("format") != expect:
        raise ScoreFormatError(
            f"{path}: header declares format {header.get('format')!r}, expected {expect!r}"
        )
    if header.get("version") != VERSION:
        raise ScoreFormatError(f"{path}: unsupported version {header.get('version')!r}")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ScoreFormatError(f"{path}:{line_no}: bad row: {exc}") from exc
    return header, rows


def _row_id(row: dict, path, line_no: int) -> int:
    try:
        return hex_to_id(row["id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ScoreFormatError(f"{path}:{line_no}: missing or bad record id") from exc


def _check_finite(arr: np.ndarray, record_id: int, fieldname: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ScoreFormatError(
            f"non-finite value in {fieldname} of record {id_to_hex(record_id)}",
            record_id=record_id,
            field=fieldname,
        )


def _check_unique(record_id: int, seen: set[int], path) -> None:
    if record_id in seen:
        raise ScoreFormatError(
            f"{path}: duplicate record id {id_to_hex(record_id)}", record_id=record_id
        )
    seen.add(record_id)


# ---------------------------------------------------------------------------
# score table


@dataclass
class ScoreTable:
    """Scalar per-record scores for one method, plus selection metadata."""

    method: str
    entries: dict[int, float]
    direction: str = DIRECTION_HIGH
    provenance: str = ""
    params: dict = field(default_factory=dict)
    degenerate_ids: list[int] = field(default_factory=list)
    excluded_ids: list[int] = field(default_factory=list)
    source_digest: str = ""

    def ids(self) -> set[int]:
        return set(self.entries)


def write_score_table(path: str | Path, table: ScoreTable, binary: bool = False) -> None:
    header = {
        "method": table.method,
        "direction": table.direction,
        "provenance": table.provenance,
        "params": table.params,
        "degenerate_ids": [id_to_hex(i) for i in table.degenerate_ids],
        "excluded_ids": [id_to_hex(i) for i in table.excluded_ids],
    }
    if binary:
        ids = sorted(table.entries)
        payload = struct.pack("<Q", len(ids)) + b"".join(
            struct.pack("<Qd", i, table.entries[i]) for i in ids
        )
        write_container(path, KIND_SCORE_TABLE, header, payload)
        return
    head = dict(header)
    head["format"] = KIND_SCORE_TABLE
    head["version"] = VERSION
    lines = [json.dumps(head, sort_keys=True)]
    for i in sorted(table.entries):
        lines.append(json.dumps({"id": id_to_hex(i), "score": table.entries[i]}))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_score_table(path: str | Path) -> ScoreTable:
    entries: dict[int, float] = {}
    seen: set[int] = set()
    if _is_binary(path):
        kind, header, payload = read_container(path)
        if kind != KIND_SCORE_TABLE:
            raise ScoreFormatError(f"{path}: container holds {kind}, expected score_table")
        (n,) = struct.unpack_from("<Q", payload, 0)
        arr = np.frombuffer(payload, dtype=np.dtype([("id", "<u8"), ("score", "<f8")]), count=n, offset=8)
        for rid, score in zip(arr["id"].tolist(), arr["score"].tolist()):
            _check_unique(rid, seen, path)
            if not np.isfinite(score):
                raise ScoreFormatError(
                    f"non-finite score for record {id_to_hex(rid)}", record_id=rid, field="score"
                )
            entries[rid] = score
    else:
        header, rows = _read_text(path, KIND_SCORE_TABLE)
        for line_no, row in enumerate(rows, start=2):
            rid = _row_id(row, path, line_no)
            _check_unique(rid, seen, path)
            score = row.get("score")
            if not isinstance(score, (int, float)) or not np.isfinite(score):
                raise ScoreFormatError(
                    f"non-finite or missing score for record {id_to_hex(rid)}",
                    record_id=rid,
                    field="score",
                )
            entries[rid] = float(score)
    return ScoreTable(
        method=header.get("method", ""),
        entries=entries,
        direction=header.get("direction", DIRECTION_HIGH),
        provenance=header.get("provenance", ""),
        params=header.get("params", {}),
        degenerate_ids=[hex_to_id(x) for x in header.get("degenerate_ids", [])],
        excluded_ids=[hex_to_id(x) for x in header.get("excluded_ids", [])],
        source_digest=file_digest(path),
    )


# ---------------------------------------------------------------------------
# log-probabilities


@dataclass
class LogProbStore:
    """Per-record arrays of per-answer-token natural-log probabilities.

    ``conditioned[i]`` is log P(token_i | instruction, preceding answer tokens);
    ``unconditioned[i]`` is log P(token_i | preceding answer tokens alone).
    Arrays are equal length N >= 1 with all entries <= 0.
    """

    entries: dict[int, tuple[np.ndarray, np.ndarray]]
    provenance: str = ""
    source_digest: str = ""

    def ids(self) -> set[int]:
        return set(self.entries)


def _validate_logprob_pair(rid: int, cond: np.ndarray, uncond: np.ndarray) -> None:
    if cond.ndim != 1 or uncond.ndim != 1 or len(cond) == 0:
        raise ScoreFormatError(
            f"empty log-prob array for record {id_to_hex(rid)}", record_id=rid, field="conditioned"
        )
    if len(cond) != len(uncond):
        raise ScoreFormatError(
            f"record {id_to_hex(rid)}: conditioned length {len(cond)} != "
            f"unconditioned length {len(uncond)}",
            record_id=rid,
            field="unconditioned",
        )
    _check_finite(cond, rid, "conditioned")
    _check_finite(uncond, rid, "unconditioned")
    if np.any(cond > 0) or np.any(uncond > 0):
        raise ScoreFormatError(
            f"record {id_to_hex(rid)}: positive log-probability", record_id=rid, field="logprob"
        )


def write_logprobs(
    path: str | Path,
    entries: dict[int, tuple[Sequence[float], Sequence[float]]],
    provenance: str = "",
    binary: bool = False,
) -> None:
    header = {"provenance": provenance}
    if binary:
        chunks = [struct.pack("<Q", len(entries))]
        for rid in sorted(entries):
            cond, uncond = entries[rid]
            cond = np.asarray(cond, dtype="<f8")
            uncond = np.asarray(uncond, dtype="<f8")
            chunks.append(struct.pack("<QI", rid, len(cond)))
            chunks.append(cond.tobytes())
            chunks.append(uncond.tobytes())
        write_container(path, KIND_LOGPROBS, header, b"".join(chunks))
        return
    head = {"format": KIND_LOGPROBS, "version": VERSION, **header}
    lines = [json.dumps(head, sort_keys=True)]
    for rid in sorted(entries):
        cond, uncond = entries[rid]
        lines.append(
            json.dumps({"id": id_to_hex(rid), "conditioned": list(map(float, cond)),
                        "unconditioned": list(map(float, uncond))})
        )
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_logprobs(path: str | Path) -> LogProbStore:
    entries: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    seen: set[int] = set()
    if _is_binary(path):
        kind, header, payload = read_container(path)
        if kind != KIND_LOGPROBS:
            raise ScoreFormatError(f"{path}: container holds {kind}, expected logprobs")
        (n,) = struct.unpack_from("<Q", payload, 0)
        off = 8
        for _ in range(n):
            rid, ntok = struct.unpack_from("<QI", payload, off)
            off += 12
            cond = np.frombuffer(payload, dtype="<f8", count=ntok, offset=off).copy()
            off += 8 * ntok
            uncond = np.frombuffer(payload, dtype="<f8", count=ntok, offset=off).copy()
            off += 8 * ntok
            _check_unique(rid, seen, path)
            _validate_logprob_pair(rid, cond, uncond)
            entries[rid] = (cond, uncond)
    else:
        header, rows = _read_text(path, KIND_LOGPROBS)
        for line_no, row in enumerate(rows, start=2):
            rid = _row_id(row, path, line_no)
            _check_unique(rid, seen, path)
            try:
                cond = np.asarray(row["conditioned"], dtype=np.float64)
                uncond = np.asarray(row["unconditioned"], dtype=np.float64)
            except (KeyError, ValueError) as exc:
                raise ScoreFormatError(
                    f"{path}:{line_no}: bad log-prob arrays", record_id=rid
                ) from exc
            _validate_logprob_pair(rid, cond, uncond)
            entries[rid] = (cond, uncond)
    return LogProbStore(
        entries=entries,
        provenance=header.get("provenance", ""),
        source_digest=file_digest(path),
    )


# ---------------------------------------------------------------------------
# rating probes


@dataclass
class RatingProbe:
    """Per-record (rating prompt x score token) probability matrices.

    ``values`` declares whether the backend emitted raw logits or
    probabilities; the engine applies its softmax exactly once either way,
    so the flag exists to stop anyone normalizing twice upstream.
    """

    entries: dict[int, np.ndarray]
    k_prompts: int
    k_scores: int
    values: str = "probabilities"
    provenance: str = ""
    source_digest: str = ""

    def ids(self) -> set[int]:
        return set(self.entries)


def write_rating_probes(
    path: str | Path,
    entries: dict[int, np.ndarray],
    values: str = "probabilities",
    provenance: str = "",
    binary: bool = False,
) -> None:
    first = next(iter(entries.values()))
    kp, ks = np.asarray(first).shape
    header = {"k_prompts": kp, "k_scores": ks, "values": values, "provenance": provenance}
    if binary:
        chunks = [struct.pack("<Q", len(entries))]
        for rid in sorted(entries):
            mat = np.ascontiguousarray(np.asarray(entries[rid], dtype="<f8"))
            chunks.append(struct.pack("<Q", rid) + mat.tobytes())
        write_container(path, KIND_RATING_PROBES, header, b"".join(chunks))
        return
    head = {"format": KIND_RATING_PROBES, "version": VERSION, **header}
    lines = [json.dumps(head, sort_keys=True)]
    for rid in sorted(entries):
        mat = np.asarray(entries[rid], dtype=np.float64)
        lines.append(json.dumps({"id": id_to_hex(rid), "probe": mat.tolist()}))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _validate_probe(rid: int, mat: np.ndarray, k_scores: int, values: str) -> None:
    if mat.ndim != 2:
        raise ScoreFormatError(
            f"record {id_to_hex(rid)}: probe matrix is not rectangular", record_id=rid, field="probe"
        )
    if k_scores < 2:
        raise ScoreFormatError(
            f"record {id_to_hex(rid)}: need at least 2 score tokens", record_id=rid, field="probe"
        )
    _check_finite(mat, rid, "probe")
    if values == "probabilities" and (np.any(mat < 0.0) or np.any(mat > 1.0)):
        raise ScoreFormatError(
            f"record {id_to_hex(rid)}: probability outside [0, 1]", record_id=rid, field="probe"
        )


def load_rating_probes(path: str | Path) -> RatingProbe:
    entries: dict[int, np.ndarray] = {}
    seen: set[int] = set()
    if _is_binary(path):
        kind, header, payload = read_container(path)
        if kind != KIND_RATING_PROBES:
            raise ScoreFormatError(f"{path}: container holds {kind}, expected rating_probes")
        kp, ks = int(header["k_prompts"]), int(header["k_scores"])
        values = header.get("values", "probabilities")
        (n,) = struct.unpack_from("<Q", payload, 0)
        off = 8
        for _ in range(n):
            (rid,) = struct.unpack_from("<Q", payload, off)
            off += 8
            mat = np.frombuffer(payload, dtype="<f8", count=kp * ks, offset=off).reshape(kp, ks).copy()
            off += 8 * kp * ks
            _check_unique(rid, seen, path)
            _validate_probe(rid, mat, ks, values)
            entries[rid] = mat
    else:
        header, rows = _read_text(path, KIND_RATING_PROBES)
        kp, ks = int(header["k_prompts"]), int(header["k_scores"])
        values = header.get("values", "probabilities")
        for line_no, row in enumerate(rows, start=2):
            rid = _row_id(row, path, line_no)
            _check_unique(rid, seen, path)
            try:
                mat = np.asarray(row["probe"], dtype=np.float64)
            except (KeyError, ValueError) as exc:
                raise ScoreFormatError(f"{path}:{line_no}: bad probe matrix", record_id=rid) from exc
            if mat.shape != (kp, ks):
                raise ScoreFormatError(
                    f"record {id_to_hex(rid)}: probe shape {mat.shape} != header "
                    f"({kp}, {ks})",
                    record_id=rid,
                    field="probe",
                )
            _validate_probe(rid, mat, ks, values)
            entries[rid] = mat
    return RatingProbe(
        entries=entries,
        k_prompts=kp,
        k_scores=ks,
        values=values,
        provenance=header.get("provenance", ""),
        source_digest=file_digest(path),
    )


# ---------------------------------------------------------------------------
# gradient features


@dataclass
class GradientFeatureStore:
    """Projected per-checkpoint training gradients plus validation averages.

    ``learning_rates[i]`` is the learning rate at checkpoint i; each record
    and each validation set carries one d-dimensional vector per checkpoint.
    """

    learning_rates: np.ndarray
    entries: dict[int, np.ndarray]            # (n_checkpoints, dim) per record
    validation_sets: dict[str, np.ndarray]    # (n_checkpoints, dim) per set
    dim: int
    provenance: str = ""
    source_digest: str = ""

    @property
    def n_checkpoints(self) -> int:
        return len(self.learning_rates)

    def ids(self) -> set[int]:
        return set(self.entries)


def write_gradient_features(
    path: str | Path,
    learning_rates: Sequence[float],
    entries: dict[int, np.ndarray],
    validation_sets: dict[str, np.ndarray],
    provenance: str = "",
    binary: bool = False,
) -> None:
    first = np.asarray(next(iter(entries.values())))
    n_ckpt, dim = first.shape
    header = {
        "dim": dim,
        "learning_rates": [float(x) for x in learning_rates],
        "validation_sets": {
            name: np.asarray(mat, dtype=np.float64).tolist() for name, mat in validation_sets.items()
        },
        "provenance": provenance,
    }
    if binary:
        chunks = [struct.pack("<Q", len(entries))]
        for rid in sorted(entries):
            mat = np.ascontiguousarray(np.asarray(entries[rid], dtype="<f8"))
            chunks.append(struct.pack("<Q", rid) + mat.tobytes())
        write_container(path, KIND_GRADIENT_FEATURES, header, b"".join(chunks))
        return
    head = {"format": KIND_GRADIENT_FEATURES, "version": VERSION, **header}
    lines = [json.dumps(head, sort_keys=True)]
    for rid in sorted(entries):
        mat = np.asarray(entries[rid], dtype=np.float64)
        lines.append(json.dumps({"id": id_to_hex(rid), "grads": mat.tolist()}))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_gradient_features(path: str | Path) -> GradientFeatureStore:
    if _is_binary(path):
        kind, header, payload = read_container(path)
        if kind != KIND_GRADIENT_FEATURES:
            raise ScoreFormatError(f"{path}: container holds {kind}, expected gradient_features")
        rows = None
    else:
        header, rows = _read_text(path, KIND_GRADIENT_FEATURES)

    try:
        dim = int(header["dim"])
        lrs = np.asarray(header["learning_rates"], dtype=np.float64)
        val_sets = {
            str(name): np.asarray(mat, dtype=np.float64)
            for name, mat in header["validation_sets"].items()
        }
    except (KeyError, ValueError) as exc:
        raise ScoreFormatError(f"{path}: bad gradient-feature header: {exc}") from exc
    n_ckpt = len(lrs)
    if n_ckpt < 1:
        raise ScoreFormatError(f"{path}: need at least one checkpoint")
    if np.any(lrs <= 0) or not np.all(np.isfinite(lrs)):
        raise ScoreFormatError(f"{path}: learning rates must be finite and positive")
    if not val_sets:
        raise ScoreFormatError(f"{path}: need at least one validation set")
    for name, mat in val_sets.items():
        if mat.shape != (n_ckpt, dim):
            raise ScoreFormatError(
                f"{path}: validation set {name!r} has shape {mat.shape}, "
                f"expected ({n_ckpt}, {dim})",
                field=name,
            )
        if not np.all(np.isfinite(mat)):
            raise ScoreFormatError(f"{path}: non-finite value in validation set {name!r}", field=name)

    entries: dict[int, np.ndarray] = {}
    seen: set[int] = set()
    if rows is None:
        (n,) = struct.unpack_from("<Q", payload, 0)
        off = 8
        for _ in range(n):
            (rid,) = struct.unpack_from("<Q", payload, off)
            off += 8
            mat = (
                np.frombuffer(payload, dtype="<f8", count=n_ckpt * dim, offset=off)
                .reshape(n_ckpt, dim)
                .copy()
            )
            off += 8 * n_ckpt * dim
            _check_unique(rid, seen, path)
            _check_finite(mat, rid, "grads")
            entries[rid] = mat
    else:
        for line_no, row in enumerate(rows, start=2):
            rid = _row_id(row, path, line_no)
            _check_unique(rid, seen, path)
            try:
                mat = np.asarray(row["grads"], dtype=np.float64)
            except (KeyError, ValueError) as exc:
                raise ScoreFormatError(f"{path}:{line_no}: bad gradient matrix", record_id=rid) from exc
            if mat.shape != (n_ckpt, dim):
                raise ScoreFormatError(
                    f"record {id_to_hex(rid)}: gradient shape {mat.shape} != ({n_ckpt}, {dim})",
                    record_id=rid,
                    field="grads",
                )
            _check_finite(mat, rid, "grads")
            entries[rid] = mat
    return GradientFeatureStore(
        learning_rates=lrs,
        entries=entries,
        validation_sets=val_sets,
        dim=dim,
        provenance=header.get("provenance", ""),
        source_digest=file_digest(path),
    )


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingMatrix:
    """Dense per-record embedding vectors, canonicalized to ascending-id order.

    Row order is independent of file row order, which makes every consumer
    (clustering, coverage sampling) deterministic under input shuffling.
    """

    ids: np.ndarray        # (n,) uint64, strictly ascending
    matrix: np.ndarray     # (n, dim) float64
    dim: int
    provenance: str = ""
    source_digest: str = ""

    def __post_init__(self):
        self._index = {int(i): k for k, i in enumerate(self.ids.tolist())}

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, record_id: int) -> np.ndarray:
        return self.matrix[self._index[record_id]]

    def index_of(self, record_id: int) -> int:
        return self._index[record_id]

    def ids_set(self) -> set[int]:
        return set(self._index)


def write_embeddings(
    path: str | Path,
    entries: dict[int, Sequence[float]] | tuple[np.ndarray, np.ndarray],
    provenance: str = "",
    binary: bool = False,
) -> None:
    if isinstance(entries, tuple):
        ids, matrix = entries
        ids = np.asarray(ids, dtype=np.uint64)
        matrix = np.asarray(matrix, dtype=np.float64)
    else:
        ids = np.asarray(sorted(entries), dtype=np.uint64)
        matrix = np.asarray([entries[int(i)] for i in ids], dtype=np.float64)
    dim = int(matrix.shape[1])
    header = {"dim": dim, "provenance": provenance}
    if binary:
        rec = np.zeros(len(ids), dtype=np.dtype([("id", "<u8"), ("vec", "<f8", (dim,))]))
        rec["id"] = ids
        rec["vec"] = matrix
        write_container(path, KIND_EMBEDDINGS, header, struct.pack("<Q", len(ids)) + rec.tobytes())
        return
    head = {"format": KIND_EMBEDDINGS, "version": VERSION, **header}
    lines = [json.dumps(head, sort_keys=True)]
    for i, rid in enumerate(ids.tolist()):
        lines.append(json.dumps({"id": id_to_hex(rid), "vector": matrix[i].tolist()}))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    if _is_binary(path):
        kind, header, payload = read_container(path)
        if kind != KIND_EMBEDDINGS:
            raise ScoreFormatError(f"{path}: container holds {kind}, expected embeddings")
        dim = int(header["dim"])
        (n,) = struct.unpack_from("<Q", payload, 0)
        rec = np.frombuffer(
            payload, dtype=np.dtype([("id", "<u8"), ("vec", "<f8", (dim,))]), count=n, offset=8
        )
        ids = rec["id"].astype(np.uint64)
        matrix = rec["vec"].astype(np.float64)
    else:
        header, rows = _read_text(path, KIND_EMBEDDINGS)
        dim = int(header["dim"])
        id_list: list[int] = []
        vecs: list[list[float]] = []
        for line_no, row in enumerate(rows, start=2):
            rid = _row_id(row, path, line_no)
            vec = row.get("vector")
            if not isinstance(vec, list) or len(vec) != dim:
                raise ScoreFormatError(
                    f"record {id_to_hex(rid)}: vector length "
                    f"{len(vec) if isinstance(vec, list) else 'missing'} != dim {dim}",
                    record_id=rid,
                    field="vector",
                )
            id_list.append(rid)
            vecs.append(vec)
        ids = np.asarray(id_list, dtype=np.uint64)
        matrix = np.asarray(vecs, dtype=np.float64) if vecs else np.zeros((0, dim))

    if len(set(ids.tolist())) != len(ids):
        dupes = [i for i, c in Counter(ids.tolist()).items() if c > 1]
        raise ScoreFormatError(f"{path}: duplicate record id {id_to_hex(dupes[0])}", record_id=dupes[0])
    if not np.all(np.isfinite(matrix)):
        bad = int(ids[np.argwhere(~np.isfinite(matrix))[0][0]])
        raise ScoreFormatError(
            f"non-finite value in vector of record {id_to_hex(bad)}", record_id=bad, field="vector"
        )
    order = np.argsort(ids, kind="stable")
    return EmbeddingMatrix(
        ids=ids[order],
        matrix=np.ascontiguousarray(matrix[order]),
        dim=dim,
        provenance=header.get("provenance", ""),
        source_digest=file_digest(path),
    )


# ---------------------------------------------------------------------------
# coverage


POLICY_STRICT = "strict"
POLICY_ALLOW_MISSING = "allow-missing"


@dataclass
class CoverageReport:
    missing: list[int]
    usable: int
    extra: int

    def to_dict(self) -> dict:
        return {
            "missing_count": len(self.missing),
            "missing_ids": [id_to_hex(i) for i in self.missing[:20]],
            "usable": self.usable,
            "extra": self.extra,
        }


def validate_coverage(
    store_ids: Iterable[int], corpus_ids: Iterable[int], policy: str = POLICY_STRICT
) -> CoverageReport:
    """Check that every corpus record has a score.

    Strict policy raises on any gap; allow-missing returns the missing ids so
    the caller can exclude them and record the count in its manifest.
    """
    store = set(store_ids)
    corpus = set(corpus_ids)
    missing = sorted(corpus - store)
    report = CoverageReport(missing=missing, usable=len(corpus) - len(missing), extra=len(store - corpus))
    if policy == POLICY_STRICT and missing:
        shown = ", ".join(id_to_hex(i) for i in missing[:5])
        raise CoverageError(
            f"{len(missing)} corpus record(s) lack scores under strict coverage "
            f"(first: {shown})",
            missing=missing,
        )
    if policy not in (POLICY_STRICT, POLICY_ALLOW_MISSING):
        raise ScoreFormatError(f"unknown coverage policy: {policy!r}")
    return report
