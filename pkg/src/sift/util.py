"""Small shared helpers: hashing, atomic writes, id formatting, memory accounting."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

from .errors import ResourceCapError

DIGEST_BYTES = 16  # blake2b-128 for file/corpus digests


def blake2b_hex(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=DIGEST_BYTES).hexdigest()


def file_digest(path: str | Path, chunk: int = 1 << 20) -> str:
    h = hashlib.blake2b(digest_size=DIGEST_BYTES)
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(chunk)
            if not buf:
                break
            h.update(buf)
    return h.hexdigest()


def id_to_hex(record_id: int) -> str:
    return f"{record_id:016x}"


def hex_to_id(text: str) -> int:
    value = int(text, 16)
    if not 0 <= value < 1 << 64:
        raise ValueError(f"record id out of 64-bit range: {text!r}")
    return value


def canonical_json(obj) -> str:
    """Stable JSON encoding: sorted keys, no whitespace, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via temp file + rename so a killed run never leaves a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class MemoryBudget:
    """Byte accounting for streaming passes.

    The engine enforces its memory ceiling by charging every long-lived buffer
    it allocates against this budget, rather than relying on OS limits, so a
    breach fails predictably with an actionable message.
    """

    def __init__(self, limit_bytes: int | None = None):
        self.limit = limit_bytes
        self.used = 0
        self.high_water = 0

    def charge(self, nbytes: int, what: str = "buffer") -> None:
        self.used += nbytes
        if self.used > self.high_water:
            self.high_water = self.used
        if self.limit is not None and self.used > self.limit:
            raise ResourceCapError(
                f"memory ceiling breached: {what} pushed accounted usage to "
                f"{self.used / 2**20:.1f} MiB (limit {self.limit / 2**20:.1f} MiB)"
            )

    def release(self, nbytes: int) -> None:
        self.used = max(0, self.used - nbytes)


#: Budget used when the CLI does not configure one; unlimited.
UNLIMITED = MemoryBudget(None)
