"""Streaming corpus ingestion, content hashing, token counting, and summary stats.

Corpora are JSONL files in one of two schemas:

  conversation:     {"source"?: str, "conversations": [{"from": "human"|"gpt",
                     "value": str}, ...], "token_count"?: int}
  prompt-response:  {"instruction": str, "output": str, "source"?: str,
                     "token_count"?: int}

Every pass over a corpus is single-pass and holds O(1) records plus bounded
accumulators, so memory is independent of corpus size.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MalformedCorpusError, SiftError
from .util import MemoryBudget, UNLIMITED, id_to_hex

ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"

_CONV_ROLE = {"human": ROLE_USER, "gpt": ROLE_ASSISTANT}
_ROLE_CONV = {ROLE_USER: "human", ROLE_ASSISTANT: "gpt"}
_ROLE_BYTE = {ROLE_USER: b"\x00", ROLE_ASSISTANT: b"\x01"}

FORMAT_CONVERSATION = "conversation"
FORMAT_PAIR = "pair"

#: Malformed lines tolerated before a non-lenient ingest aborts.
MALFORMED_LIMIT = 100


@dataclass(frozen=True, slots=True)
class Record:
    """One instruction-tuning example.

    ``id`` is a 64-bit hash of the ordered (role, text) sequence and nothing
    else, so re-ingesting the same content always yields the same id and
    byte-identical duplicates collide on purpose.
    """

    id: int
    source: str
    turns: tuple[tuple[str, str], ...]
    byte_len: int
    token_count: int | None = None

    @property
    def instruction_text(self) -> str:
        return "\n".join(f"{role}: {text}" for role, text in self.turns if role == ROLE_USER)

    @property
    def response_text(self) -> str:
        return "\n".join(f"{role}: {text}" for role, text in self.turns if role == ROLE_ASSISTANT)


def canonical_bytes(turns: Iterable[tuple[str, str]]) -> bytes:
    """Platform-independent serialization of a turn sequence.

    Per turn: one role byte (0x00 user, 0x01 assistant), an 8-byte
    little-endian byte length, then the UTF-8 text. Used both for content
    hashing and as the byte stream handed to the compressor-based selector.
    """
    parts = []
    for role, text in turns:
        raw = text.encode("utf-8")
        parts.append(_ROLE_BYTE[role] + len(raw).to_bytes(8, "little") + raw)
    return b"".join(parts)


def content_hash(turns: Iterable[tuple[str, str]]) -> int:
    """64-bit id over the canonical serialization (blake2b, 8-byte digest).

    Collision odds follow the birthday bound, about n^2 / 2^65: under 1e-7
    for a 10-million-record corpus.
    """
    digest = hashlib.blake2b(canonical_bytes(turns), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def make_record(turns: list[tuple[str, str]], source: str = "", token_count: int | None = None) -> Record:
    if not turns:
        raise SiftError("record has no turns")
    if not any(role == ROLE_ASSISTANT for role, _ in turns):
        raise SiftError("record has no assistant turn")
    tturns = tuple(turns)
    byte_len = sum(len(text.encode("utf-8")) for _, text in tturns)
    return Record(
        id=content_hash(tturns),
        source=source,
        turns=tturns,
        byte_len=byte_len,
        token_count=token_count,
    )


def _parse_line(obj: dict, fmt: str) -> Record:
    token_count = obj.get("token_count")
    if token_count is not None and (not isinstance(token_count, int) or token_count < 0):
        raise ValueError("token_count must be a non-negative integer")
    source = obj.get("source", "")
    if not isinstance(source, str):
        raise ValueError("source must be a string")

    if fmt == FORMAT_CONVERSATION:
        conv = obj.get("conversations")
        if not isinstance(conv, list) or not conv:
            raise ValueError("missing or empty 'conversations'")
        turns = []
        for turn in conv:
            if not isinstance(turn, dict):
                raise ValueError("turn is not an object")
            role = _CONV_ROLE.get(turn.get("from"))
            text = turn.get("value")
            if role is None or not isinstance(text, str):
                raise ValueError(f"bad turn: from={turn.get('from')!r}")
            turns.append((role, text))
    elif fmt == FORMAT_PAIR:
        instruction = obj.get("instruction")
        output = obj.get("output")
        if not isinstance(instruction, str) or not isinstance(output, str):
            raise ValueError("missing 'instruction' or 'output'")
        turns = [(ROLE_USER, instruction), (ROLE_ASSISTANT, output)]
    else:
        raise SiftError(f"unknown corpus format: {fmt!r}")

    if not any(role == ROLE_ASSISTANT for role, _ in turns):
        raise ValueError("record has no assistant turn")
    return make_record(turns, source=source, token_count=token_count)


class IngestStream:
    """Iterator over a corpus file that counts (and bounds) malformed lines.

    Malformed lines are never silently dropped: they are counted, the first
    few are kept with line numbers, and once more than ``malformed_limit``
    accumulate a non-lenient stream raises MalformedCorpusError.
    """

    def __init__(
        self,
        path: str | Path,
        fmt: str = FORMAT_CONVERSATION,
        lenient: bool = False,
        drop_duplicates: bool = False,
        malformed_limit: int = MALFORMED_LIMIT,
        budget: MemoryBudget = UNLIMITED,
    ):
        if fmt not in (FORMAT_CONVERSATION, FORMAT_PAIR):
            raise SiftError(f"unknown corpus format: {fmt!r}")
        self.path = Path(path)
        self.fmt = fmt
        self.lenient = lenient
        self.drop_duplicates = drop_duplicates
        self.malformed_limit = malformed_limit
        self.budget = budget
        self.malformed = 0
        self.malformed_samples: list[dict] = []
        self.duplicates_dropped = 0
        self.records_yielded = 0
        self._digest = hashlib.blake2b(digest_size=16)

    def __iter__(self) -> Iterator[Record]:
        seen: set[int] | None = set() if self.drop_duplicates else None
        with open(self.path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = _parse_line(json.loads(line), self.fmt)
                except (ValueError, json.JSONDecodeError) as exc:
                    self._note_malformed(line_no, str(exc))
                    continue
                if seen is not None:
                    if record.id in seen:
                        self.duplicates_dropped += 1
                        continue
                    seen.add(record.id)
                    self.budget.charge(64, "duplicate-id set")
                self._digest.update(record.id.to_bytes(8, "big"))
                self.records_yielded += 1
                yield record

    def _note_malformed(self, line_no: int, reason: str) -> None:
        self.malformed += 1
        if len(self.malformed_samples) < 10:
            self.malformed_samples.append({"line": line_no, "reason": reason})
        if not self.lenient and self.malformed > self.malformed_limit:
            raise MalformedCorpusError(
                f"{self.path}: more than {self.malformed_limit} malformed lines "
                f"(first at line {self.malformed_samples[0]['line']}); "
                "rerun with --lenient to skip and count them",
                malformed=self.malformed,
                samples=self.malformed_samples,
            )

    @property
    def corpus_digest(self) -> str:
        """Digest of the yielded record-id sequence, in stream order."""
        return self._digest.hexdigest()


def ingest(
    path: str | Path,
    fmt: str = FORMAT_CONVERSATION,
    lenient: bool = False,
    drop_duplicates: bool = False,
) -> IngestStream:
    return IngestStream(path, fmt=fmt, lenient=lenient, drop_duplicates=drop_duplicates)


def serialize(record: Record, fmt: str = FORMAT_CONVERSATION) -> str:
    """Inverse of ingest for well-formed records: one JSON line, no newline."""
    obj: dict = {}
    if record.source:
        obj["source"] = record.source
    if fmt == FORMAT_CONVERSATION:
        obj["conversations"] = [
            {"from": _ROLE_CONV[role], "value": text} for role, text in record.turns
        ]
    elif fmt == FORMAT_PAIR:
        users = [t for r, t in record.turns if r == ROLE_USER]
        bots = [t for r, t in record.turns if r == ROLE_ASSISTANT]
        if len(record.turns) != len(users) + len(bots) or len(users) > 1 or len(bots) != 1:
            raise SiftError(
                f"record {id_to_hex(record.id)} is multi-turn and cannot round-trip "
                "through the prompt-response schema"
            )
        obj["instruction"] = users[0] if users else ""
        obj["output"] = bots[0]
    else:
        raise SiftError(f"unknown corpus format: {fmt!r}")
    if record.token_count is not None:
        obj["token_count"] = record.token_count
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


COUNTER_INGESTED = "ingested"
COUNTER_WHITESPACE = "whitespace"

SCOPE_BOTH = "both"
SCOPE_RESPONSE = "response"


def token_count(record: Record, counter: str = COUNTER_WHITESPACE, scope: str = SCOPE_BOTH) -> int:
    """Token count for one record.

    ``ingested`` echoes the count carried by the record (from the corpus line
    or an attached score file); ``whitespace`` splits each turn text on
    whitespace. ``scope`` limits counting to assistant turns when set to
    ``response``. The chosen counter is recorded in downstream manifests.
    """
    if counter == COUNTER_INGESTED:
        if record.token_count is None:
            raise SiftError(f"record {id_to_hex(record.id)} carries no ingested token count")
        return record.token_count
    if counter != COUNTER_WHITESPACE:
        raise SiftError(f"unknown token counter: {counter!r}")
    total = 0
    for role, text in record.turns:
        if scope == SCOPE_RESPONSE and role != ROLE_ASSISTANT:
            continue
        total += len(text.split())
    return total


# Log-spaced (power-of-two) histogram of token lengths; bucket 0 holds
# zero-length records, bucket i holds counts in [2**(i-1), 2**i).


def _bucket_index(count: int) -> int:
    return count.bit_length() if count > 0 else 0


@dataclass
class CorpusStats:
    record_count: int = 0
    source_counts: dict[str, int] = field(default_factory=dict)
    histogram: list[dict] = field(default_factory=list)
    mean_tokens: float = 0.0
    median_tokens: float = 0.0
    duplicate_count: int = 0
    malformed_count: int = 0
    total_bytes: int = 0
    token_counter: str = COUNTER_WHITESPACE

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "source_counts": dict(sorted(self.source_counts.items())),
            "token_length_histogram": self.histogram,
            "mean_tokens": self.mean_tokens,
            "median_tokens": self.median_tokens,
            "duplicate_count": self.duplicate_count,
            "malformed_count": self.malformed_count,
            "total_bytes": self.total_bytes,
            "token_counter": self.token_counter,
        }


def _median_from_counter(counts: Counter, n: int) -> float:
    if n == 0:
        return 0.0
    lo_rank, hi_rank = (n - 1) // 2, n // 2
    seen = 0
    lo_val = hi_val = None
    for value in sorted(counts):
        seen += counts[value]
        if lo_val is None and seen > lo_rank:
            lo_val = value
        if seen > hi_rank:
            hi_val = value
            break
    return (lo_val + hi_val) / 2


def stats(
    records: Iterable[Record],
    counter: str = COUNTER_WHITESPACE,
    scope: str = SCOPE_BOTH,
    budget: MemoryBudget = UNLIMITED,
) -> CorpusStats:
    """Single-pass corpus summary.

    Accumulators are a per-source counter, a token-length frequency map
    (exact mean/median/histogram from distinct values, not a full list), and
    the duplicate-detection id set; all are order-invariant.
    """
    n = 0
    total_bytes = 0
    token_sum = 0
    sources: Counter = Counter()
    lengths: Counter = Counter()
    seen: set[int] = set()
    duplicates = 0
    for record in records:
        n += 1
        total_bytes += record.byte_len
        sources[record.source] += 1
        tc = token_count(record, counter=counter, scope=scope)
        token_sum += tc
        if tc not in lengths:
            budget.charge(96, "token-length frequency map")
        lengths[tc] += 1
        if record.id in seen:
            duplicates += 1
        else:
            seen.add(record.id)
            budget.charge(64, "duplicate-id set")

    hist_counts: Counter = Counter()
    for value, freq in lengths.items():
        hist_counts[_bucket_index(value)] += freq
    histogram = [
        {"lo": 0 if b == 0 else 1 << (b - 1), "hi": 1 << b if b else 1, "count": hist_counts[b]}
        for b in sorted(hist_counts)
    ]
    result = CorpusStats(
        record_count=n,
        source_counts=dict(sources),
        histogram=histogram,
        mean_tokens=token_sum / n if n else 0.0,
        median_tokens=_median_from_counter(lengths, n),
        duplicate_count=duplicates,
        total_bytes=total_bytes,
        token_counter=counter,
    )
    if isinstance(records, IngestStream):
        result.malformed_count = records.malformed
    return result
