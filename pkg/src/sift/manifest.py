"""Selection manifests: the reproducible record of one selection run.

A manifest file is two lines: the canonical JSON body (sorted keys, no
whitespace, ASCII) and a trailing digest line over the body's bytes. Rerunning
any selector with identical inputs must produce a byte-identical file, and a
truncated or tampered file never verifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import json

from . import __version__
from .errors import ManifestError
from .util import atomic_write_text, blake2b_hex, canonical_json, hex_to_id, id_to_hex


@dataclass
class SelectionManifest:
    method: str
    parameters: dict
    seed: int | None
    corpus_digest: str
    corpus_count: int
    selected_ids: list[int]
    budget: int
    quotas: list[dict] | None = None          # per-cluster {cluster, size, quota} when clustered
    inputs: list[dict] = field(default_factory=list)   # score/embedding files: kind, digest, provenance
    excluded: dict = field(default_factory=dict)       # counts: missing_score, degenerate, duplicates
    shortfall: int = 0
    prng: str | None = None
    token_counter: str | None = None
    engine_version: str = __version__

    def body(self) -> dict:
        return {
            "engine": {"name": "sift", "version": self.engine_version},
            "method": self.method,
            "parameters": self.parameters,
            "seed": self.seed,
            "prng": self.prng,
            "token_counter": self.token_counter,
            "corpus": {"digest": self.corpus_digest, "record_count": self.corpus_count},
            "inputs": self.inputs,
            "budget": self.budget,
            "shortfall": self.shortfall,
            "excluded": self.excluded,
            "quotas": self.quotas,
            "selected_ids": [id_to_hex(i) for i in self.selected_ids],
        }

    def to_text(self) -> str:
        body = canonical_json(self.body())
        digest = blake2b_hex(body.encode("utf-8"))
        return body + "\n" + canonical_json({"algo": "blake2b-128", "digest": digest}) + "\n"

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_text())


def load_manifest(path: str | Path) -> SelectionManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if len(lines) != 2:
        raise ManifestError(f"{path}: manifest must be exactly two lines (body + digest)")
    body_text, digest_text = lines
    try:
        trailer = json.loads(digest_text)
        expected = trailer["digest"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: bad digest line") from exc
    actual = blake2b_hex(body_text.encode("utf-8"))
    if actual != expected:
        raise ManifestError(f"{path}: digest mismatch; file is truncated or tampered")
    try:
        body = json.loads(body_text)
        manifest = SelectionManifest(
            method=body["method"],
            parameters=body["parameters"],
            seed=body["seed"],
            corpus_digest=body["corpus"]["digest"],
            corpus_count=body["corpus"]["record_count"],
            selected_ids=[hex_to_id(x) for x in body["selected_ids"]],
            budget=body["budget"],
            quotas=body.get("quotas"),
            inputs=body.get("inputs", []),
            excluded=body.get("excluded", {}),
            shortfall=body.get("shortfall", 0),
            prng=body.get("prng"),
            token_counter=body.get("token_counter"),
            engine_version=body["engine"]["version"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest body: {exc}") from exc
    return manifest
