"""Exception hierarchy shared by all sift modules.

Exit-code contract for the CLI: 0 success, 1 data error, 2 usage error,
3 resource-cap breach.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3


class SiftError(Exception):
    """Base class for all engine errors. Maps to exit code 1 unless overridden."""

    exit_code = EXIT_DATA

    def report(self) -> dict:
        """Machine-readable error payload for the CLI error channel."""
        return {"error": type(self).__name__, "message": str(self)}


class UsageError(SiftError):
    """Invalid flag combination or config; maps to exit code 2 like argparse."""

    exit_code = EXIT_USAGE


class MalformedCorpusError(SiftError):
    """Corpus stream exceeded the malformed-line tolerance."""

    def __init__(self, message: str, malformed: int = 0, samples: list | None = None):
        super().__init__(message)
        self.malformed = malformed
        self.samples = samples or []

    def report(self) -> dict:
        rep = super().report()
        rep["malformed_lines"] = self.malformed
        rep["samples"] = self.samples[:10]
        return rep


class ScoreFormatError(SiftError):
    """A score file violated its format or a type invariant."""

    def __init__(self, message: str, record_id: int | None = None, field: str | None = None):
        super().__init__(message)
        self.record_id = record_id
        self.field = field

    def report(self) -> dict:
        rep = super().report()
        if self.record_id is not None:
            rep["record_id"] = f"{self.record_id:016x}"
        if self.field is not None:
            rep["field"] = self.field
        return rep


class CoverageError(SiftError):
    """Strict coverage policy violated: corpus ids missing from a score store."""

    def __init__(self, message: str, missing: list[int]):
        super().__init__(message)
        self.missing = missing

    def report(self) -> dict:
        rep = super().report()
        rep["missing_ids"] = [f"{i:016x}" for i in self.missing[:20]]
        rep["missing_count"] = len(self.missing)
        return rep


class DegenerateRecordError(SiftError):
    """A record cannot be scored (zero-norm gradient, all-zero log-probs, ...)."""

    def __init__(self, message: str, record_id: int | None = None):
        super().__init__(message)
        self.record_id = record_id


class SelectionError(SiftError):
    """Infeasible selection request (budget too large, empty usable set, ...)."""


class ManifestError(SiftError):
    """Manifest failed to parse, verify, or match its corpus."""


class ResourceCapError(SiftError):
    """A configured resource ceiling was breached."""

    exit_code = EXIT_RESOURCE
