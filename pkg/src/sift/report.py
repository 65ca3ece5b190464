"""Subset comparison reports: summary table plus rendered figures.

Given a selection manifest, the corpus it came from, and a random baseline
manifest over the same corpus, this computes subset-level statistics
(token-length distribution, source and cluster coverage, whole-subset
compression ratio) and their deltas against the baseline. Output is a
tab-delimited table plus matplotlib figures written next to it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .corpus import IngestStream, Record, canonical_bytes, token_count
from .diversity import ClusterAssignment, compression_ratio
from .errors import ManifestError
from .manifest import SelectionManifest
from .util import atomic_write_text

log = logging.getLogger(__name__)


@dataclass
class SubsetStats:
    label: str
    n: int
    mean_tokens: float
    median_tokens: float
    token_lengths: list[int]
    source_counts: dict[str, int]
    source_coverage: float
    cluster_counts: dict[int, int] | None
    cluster_coverage: float | None
    compression_ratio: float


def _median(values: list[int]) -> float:
    if not values:
        return 0.0
    s = sorted(values)
    mid = len(s) // 2
    return float(s[mid]) if len(s) % 2 else (s[mid - 1] + s[mid]) / 2


def subset_stats(
    label: str,
    manifest: SelectionManifest,
    records_by_id: dict[int, tuple[int, str, bytes]],
    corpus_sources: set[str],
    assignment: ClusterAssignment | None,
) -> SubsetStats:
    lengths: list[int] = []
    sources: dict[str, int] = {}
    clusters: dict[int, int] | None = {} if assignment is not None else None
    blob_parts: list[bytes] = []
    for rid in manifest.selected_ids:
        if rid not in records_by_id:
            raise ManifestError(f"manifest id {rid:016x} not found in corpus")
        tc, source, raw = records_by_id[rid]
        lengths.append(tc)
        sources[source] = sources.get(source, 0) + 1
        blob_parts.append(raw)
        if clusters is not None:
            label_idx = assignment.label_of(rid)
            clusters[label_idx] = clusters.get(label_idx, 0) + 1
    n = len(manifest.selected_ids)
    return SubsetStats(
        label=label,
        n=n,
        mean_tokens=sum(lengths) / n if n else 0.0,
        median_tokens=_median(lengths),
        token_lengths=lengths,
        source_counts=sources,
        source_coverage=len(sources) / max(len(corpus_sources), 1),
        cluster_counts=clusters,
        cluster_coverage=(len(clusters) / assignment.k) if clusters is not None else None,
        compression_ratio=compression_ratio(b"".join(blob_parts)) if n else 0.0,
    )


def collect_corpus_view(
    records: Iterable[Record],
    wanted: set[int],
    counter: str = "whitespace",
) -> tuple[dict[int, tuple[int, str, bytes]], set[str], int]:
    """One corpus pass: per-wanted-record (token count, source, canonical bytes),
    the corpus source set, and the record count."""
    view: dict[int, tuple[int, str, bytes]] = {}
    sources: set[str] = set()
    n = 0
    for record in records:
        n += 1
        sources.add(record.source)
        if record.id in wanted and record.id not in view:
            view[record.id] = (
                token_count(record, counter=counter),
                record.source,
                canonical_bytes(record.turns),
            )
    return view, sources, n


METRICS = ("n", "mean_tokens", "median_tokens", "source_coverage", "cluster_coverage", "compression_ratio")


def build_report(
    stats: SubsetStats,
    baseline: SubsetStats,
) -> list[dict]:
    rows = []
    for metric in METRICS:
        value = getattr(stats, metric)
        base = getattr(baseline, metric)
        if value is None or base is None:
            continue
        rows.append(
            {
                "metric": metric,
                stats.label: value,
                baseline.label: base,
                "delta": value - base,
            }
        )
    return rows


def write_tsv(rows: list[dict], stats_label: str, baseline_label: str, path: Path) -> None:
    header = ["metric", stats_label, baseline_label, "delta"]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append(
            "\t".join(
                f"{row[col]:.6g}" if isinstance(row[col], float) else str(row[col])
                for col in header
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def render_figures(stats: SubsetStats, baseline: SubsetStats, out_dir: Path) -> list[Path]:
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    lo = max(1, min(stats.token_lengths + baseline.token_lengths, default=1))
    hi = max(stats.token_lengths + baseline.token_lengths, default=1) + 1
    bins = np.geomspace(lo, hi, 40)
    ax.hist(baseline.token_lengths, bins=bins, alpha=0.55, label=baseline.label)
    ax.hist(stats.token_lengths, bins=bins, alpha=0.55, label=stats.label)
    ax.set_xscale("log")
    ax.set_xlabel("token length")
    ax.set_ylabel("records")
    ax.set_title("Subset token-length distribution")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "token_lengths.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    names = sorted(set(stats.source_counts) | set(baseline.source_counts))
    xs = np.arange(len(names))
    ax.bar(xs - 0.2, [baseline.source_counts.get(s, 0) for s in names], width=0.4, label=baseline.label)
    ax.bar(xs + 0.2, [stats.source_counts.get(s, 0) for s in names], width=0.4, label=stats.label)
    ax.set_xticks(xs, names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("records")
    ax.set_title("Source coverage")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "source_coverage.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if stats.cluster_counts is not None and baseline.cluster_counts is not None:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        k = max(max(stats.cluster_counts, default=0), max(baseline.cluster_counts, default=0)) + 1
        xs = np.arange(k)
        ax.plot(xs, [baseline.cluster_counts.get(c, 0) for c in range(k)], label=baseline.label, lw=1)
        ax.plot(xs, [stats.cluster_counts.get(c, 0) for c in range(k)], label=stats.label, lw=1)
        ax.set_xlabel("cluster")
        ax.set_ylabel("records")
        ax.set_title("Cluster coverage")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "cluster_coverage.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def run_report(
    manifest: SelectionManifest,
    baseline: SelectionManifest,
    records: Iterable[Record],
    assignment: ClusterAssignment | None,
    out_dir: str | Path,
    counter: str = "whitespace",
) -> list[dict]:
    """Full report pass; returns the delta rows it wrote (and prints them)."""
    if manifest.corpus_digest != baseline.corpus_digest:
        raise ManifestError(
            "manifest and baseline were built from different corpora "
            f"({manifest.corpus_digest[:12]} vs {baseline.corpus_digest[:12]})"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = set(manifest.selected_ids) | set(baseline.selected_ids)
    view, sources, _ = collect_corpus_view(records, wanted, counter=counter)
    if isinstance(records, IngestStream) and manifest.corpus_digest != records.corpus_digest:
        raise ManifestError(
            f"corpus digest mismatch: manifest has {manifest.corpus_digest[:12]}, "
            f"stream computed {records.corpus_digest[:12]}"
        )
    stats = subset_stats(manifest.method, manifest, view, sources, assignment)
    base = subset_stats(f"random(seed={baseline.seed})", baseline, view, sources, assignment)
    rows = build_report(stats, base)
    write_tsv(rows, stats.label, base.label, out_dir / "report.tsv")
    render_figures(stats, base, out_dir)
    for row in rows:
        print(
            f"{row['metric']}: {row[stats.label]:.6g} vs {row[base.label]:.6g} "
            f"delta={row['delta']:+.6g}"
        )
    return rows
