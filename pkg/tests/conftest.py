from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sift.corpus import make_record

WORDS = (
    "explain compute list describe compare sort outline draft review trace "
    "merge filter rank sample cluster encode decode stream batch select"
).split()


def synthetic_records(n, seed=0, source="synth", min_words=3, max_words=40):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        q = " ".join(rng.choice(WORDS, size=rng.integers(min_words, max_words)))
        a = " ".join(rng.choice(WORDS, size=rng.integers(min_words, max_words)))
        records.append(make_record(
            [("user", f"{q} #{i}"), ("assistant", a)], source=source))
    return records


def write_corpus(path: Path, records, fmt="conversation"):
    from sift.corpus import serialize

    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(serialize(record, fmt=fmt) + "\n")
    return path


@pytest.fixture
def tiny_corpus(tmp_path):
    records = [
        make_record([("user", "what is two plus two"), ("assistant", "four")], source="math"),
        make_record([("user", "name a color"), ("assistant", "blue is a color")], source="chat"),
        make_record(
            [("user", "say hi"), ("assistant", "hi"), ("user", "again"), ("assistant", "hi again")],
            source="chat",
        ),
    ]
    path = write_corpus(tmp_path / "tiny.jsonl", records)
    return path, records


@pytest.fixture
def blob_embeddings():
    """Two well-separated 2-D blobs of 20 points each, keyed by synthetic ids."""
    rng = np.random.default_rng(7)
    a = rng.normal((0.0, 0.0), 0.1, size=(20, 2))
    b = rng.normal((100.0, 100.0), 0.1, size=(20, 2))
    vectors = np.vstack([a, b])
    ids = np.arange(1, 41, dtype=np.uint64)
    return ids, vectors


def corpus_line(turns, source="synth", token_count=None):
    conv = [{"from": "human" if r == "user" else "gpt", "value": t} for r, t in turns]
    obj = {"source": source, "conversations": conv}
    if token_count is not None:
        obj["token_count"] = token_count
    return json.dumps(obj, ensure_ascii=False)
