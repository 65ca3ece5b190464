"""Command-line entrypoint binding ingestion, scoring, clustering, and selection.

Exit codes are a stable contract: 0 success, 1 data error, 2 usage error,
3 resource-cap breach. Failures print a machine-readable JSON report to
stderr. All artifacts are written atomically (temp + rename).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    COUNTER_INGESTED,
    COUNTER_WHITESPACE,
    FORMAT_CONVERSATION,
    FORMAT_PAIR,
    SCOPE_BOTH,
    SCOPE_RESPONSE,
    ingest,
    stats as corpus_stats,
    token_count,
)
from .diversity import DEFAULT_CONTEXT_WINDOW, kmeans, load_assignment, save_assignment
from .errors import EXIT_DATA, SiftError, UsageError
from .manifest import load_manifest
from .quality import (
    DEFAULT_ALPHA,
    score_entropy,
    score_ifd,
    score_less,
    score_selectit,
)
from .scores import (
    POLICY_ALLOW_MISSING,
    POLICY_STRICT,
    load_embeddings,
    load_gradient_features,
    load_logprobs,
    load_rating_probes,
    load_score_table,
    validate_coverage,
    write_score_table,
)
from .select import (
    SelectionContext,
    export_subset,
    random_select,
    select_by_length,
    select_kcenter,
    select_top_by_score,
    select_zip,
)
from .util import MemoryBudget, atomic_write_text, canonical_json

log = logging.getLogger("sift")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: physical cores, or SIFT_THREADS)")
    p.add_argument("--max-memory-mb", type=int, default=None,
                   help="accounting ceiling for streaming buffers; breach exits 3")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=[FORMAT_CONVERSATION, FORMAT_PAIR],
                   default=FORMAT_CONVERSATION, help="corpus line schema")
    p.add_argument("--lenient", action="store_true",
                   help="skip malformed lines without bounding their count")
    p.add_argument("--dedup", action="store_true", help="drop exact-hash duplicate records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sift",
        description="Streaming data selection for instruction-tuning corpora.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"sift {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="summarize a corpus", allow_abbrev=False)
    p.add_argument("corpus")
    _add_corpus_flags(p)
    p.add_argument("--counter", choices=[COUNTER_WHITESPACE, COUNTER_INGESTED],
                   default=COUNTER_WHITESPACE)
    p.add_argument("--scope", choices=[SCOPE_BOTH, SCOPE_RESPONSE], default=SCOPE_BOTH)
    p.add_argument("--out", help="also write the JSON report here")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", help="compute quality scores from score files", allow_abbrev=False)
    p.add_argument("--method", required=True, choices=["ifd", "selectit", "entropy", "less"])
    p.add_argument("--in", dest="corpus", required=True, help="corpus the scores must cover")
    p.add_argument("--scores", nargs="+", required=True, help="input score file(s)")
    p.add_argument("--out", required=True, help="output score table")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--betas", default=None, help="comma-separated parameter counts, one per probe file")
    p.add_argument("--drop-ifd-ge-1", action="store_true",
                   help="exclude records whose ifd score is >= 1 before ranking")
    p.add_argument("--coverage", choices=[POLICY_STRICT, POLICY_ALLOW_MISSING], default=POLICY_STRICT)
    p.add_argument("--binary", action="store_true", help="write the table in the binary layout")
    _add_corpus_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("cluster", help="k-means over an embedding file", allow_abbrev=False)
    p.add_argument("--embeddings", required=True)
    p.add_argument("-k", type=int, default=1000)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="output assignment file")
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select", help="build a training subset", allow_abbrev=False)
    p.add_argument("--method", required=True,
                   choices=["random", "top", "top-km", "length", "length-km", "kcenter", "zip"])
    p.add_argument("--budget", type=int, default=10_000,
                   help="subset size (presets: 10000, 50000)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", help="score table (top/top-km)")
    p.add_argument("--clusters", help="cluster assignment (top-km/length-km)")
    p.add_argument("--embeddings", help="embedding file (kcenter)")
    p.add_argument("--initial-pool", help="manifest whose ids seed the kcenter pool")
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.add_argument("--direction", choices=["high", "low"], default=None,
                   help="override the score table's selection direction")
    p.add_argument("--uniform-quotas", action="store_true",
                   help="equal per-cluster quotas instead of size-proportional")
    p.add_argument("--coverage", choices=[POLICY_STRICT, POLICY_ALLOW_MISSING], default=POLICY_STRICT)
    p.add_argument("--counter", choices=[COUNTER_WHITESPACE, COUNTER_INGESTED],
                   default=COUNTER_WHITESPACE)
    p.add_argument("--scope", choices=[SCOPE_BOTH, SCOPE_RESPONSE], default=SCOPE_BOTH)
    p.add_argument("--k1", type=int, default=None, help="zip stage-1 pool size")
    p.add_argument("--k2", type=int, default=None, help="zip stage-2 pool size")
    p.add_argument("--k3", type=int, default=None, help="zip records added per round")
    p.add_argument("--window-bytes", type=int, default=DEFAULT_CONTEXT_WINDOW,
                   help="selected-set context window for zip rescoring")
    p.add_argument("--exact-recompression", action="store_true",
                   help="zip: recompress the full selected set instead of a window")
    _add_corpus_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("export", help="write the records a manifest selected", allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_corpus_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="compare a manifest against a random baseline", allow_abbrev=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--baseline", help="random-baseline manifest to diff against")
    p.add_argument("--baseline-seed", type=int, default=None,
                   help="synthesize the baseline with this seed instead")
    p.add_argument("--corpus", required=True)
    p.add_argument("--clusters", help="cluster assignment for coverage metrics")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--counter", choices=[COUNTER_WHITESPACE, COUNTER_INGESTED],
                   default=COUNTER_WHITESPACE)
    _add_corpus_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="validate score files against a corpus", allow_abbrev=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--kind", default="auto",
                   choices=["auto", "score_table", "logprobs", "rating_probes",
                            "gradient_features", "embeddings"])
    p.add_argument("--policy", choices=[POLICY_STRICT, POLICY_ALLOW_MISSING], default=POLICY_STRICT)
    _add_corpus_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    return parser


# ---------------------------------------------------------------------------
# helpers


def _budget_from(args) -> MemoryBudget:
    limit = getattr(args, "max_memory_mb", None)
    if limit is not None:
        return MemoryBudget(limit * 2**20)
    return MemoryBudget(None)


def _stream(args, budget: MemoryBudget | None = None):
    s = ingest(args.corpus, fmt=args.format, lenient=args.lenient, drop_duplicates=args.dedup)
    if budget is not None:
        s.budget = budget
    return s


_LOADERS = {
    "score_table": load_score_table,
    "logprobs": load_logprobs,
    "rating_probes": load_rating_probes,
    "gradient_features": load_gradient_features,
    "embeddings": load_embeddings,
}


def _sniff_kind(path: str) -> str:
    from .scores import MAGIC, read_container

    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == MAGIC:
        return read_container(path)[0]
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    try:
        return json.loads(first).get("format", "")
    except json.JSONDecodeError as exc:
        raise SiftError(f"{path}: cannot determine score-file kind: {exc}") from exc


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved config: %s", canonical_json(cfg))
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    budget = _budget_from(args)
    stream = _stream(args, budget)
    result = corpus_stats(stream, counter=args.counter, scope=args.scope, budget=budget)
    payload = result.to_dict()
    payload["corpus_digest"] = stream.corpus_digest
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    return 0


def cmd_score(args) -> int:
    stream = _stream(args)
    corpus_ids = [r.id for r in stream]
    policy = args.coverage

    if args.method in ("ifd", "entropy"):
        store = load_logprobs(args.scores[0])
        coverage = validate_coverage(store.ids(), corpus_ids, policy)
        table = score_ifd(store, drop_ge_1=args.drop_ifd_ge_1) if args.method == "ifd" \
            else score_entropy(store)
        digests = [{"kind": "logprobs", "path": args.scores[0], "digest": store.source_digest}]
    elif args.method == "selectit":
        probes = [load_rating_probes(p) for p in args.scores]
        betas = [float(x) for x in args.betas.split(",")] if args.betas else None
        coverage = validate_coverage(
            set.intersection(*(p.ids() for p in probes)), corpus_ids, policy
        )
        table = score_selectit(probes, alpha=args.alpha, betas=betas)
        digests = [
            {"kind": "rating_probes", "path": p, "digest": probe.source_digest}
            for p, probe in zip(args.scores, probes)
        ]
    else:  # less
        feats = load_gradient_features(args.scores[0])
        coverage = validate_coverage(feats.ids(), corpus_ids, policy)
        table = score_less(feats)
        digests = [{"kind": "gradient_features", "path": args.scores[0],
                    "digest": feats.source_digest}]

    table.params = {
        **table.params,
        "coverage_policy": policy,
        "missing_count": len(coverage.missing),
        "corpus_digest": stream.corpus_digest,
        "sources": digests,
    }
    write_score_table(args.out, table, binary=args.binary)
    log.info(
        "scored %d records (%d degenerate, %d excluded, %d missing) -> %s",
        len(table.entries), len(table.degenerate_ids), len(table.excluded_ids),
        len(coverage.missing), args.out,
    )
    return 0


def cmd_cluster(args) -> int:
    emb = load_embeddings(args.embeddings)
    assignment = kmeans(emb, k=args.k, seed=args.seed, max_iters=args.max_iters, tol=args.tol)
    save_assignment(args.out, assignment)
    log.info(
        "k=%d over %d records: inertia %.6g after %d iterations -> %s",
        args.k, len(emb), assignment.inertia, assignment.iterations_run, args.out,
    )
    return 0


def cmd_select(args) -> int:
    budget_acct = _budget_from(args)
    method = args.method
    ctx = SelectionContext(token_counter=args.counter if "length" in method else None)

    assignment = None
    if args.clusters:
        assignment = load_assignment(args.clusters)
        ctx.inputs.append({"kind": "cluster_assignment", "path": args.clusters})
    if method.endswith("-km") and assignment is None:
        raise UsageError(f"--clusters is required for method {method}")

    if method == "random":
        stream = _stream(args, budget_acct)
        manifest = random_select((r.id for r in stream), args.budget, seed=args.seed, ctx=ctx)
        manifest.corpus_digest = stream.corpus_digest
        manifest.corpus_count = stream.records_yielded
    elif method in ("top", "top-km"):
        if not args.scores:
            raise UsageError(f"--scores is required for method {method}")
        table = load_score_table(args.scores)
        stream = _stream(args, budget_acct)
        corpus_ids = [r.id for r in stream]
        coverage = validate_coverage(table.ids(), corpus_ids, args.coverage)
        ctx.corpus_digest = stream.corpus_digest
        ctx.corpus_count = stream.records_yielded
        ctx.inputs.append({"kind": "score_table", "path": args.scores,
                           "digest": table.source_digest, "provenance": table.provenance})
        ctx.excluded = {
            "missing_score": len(coverage.missing),
            "degenerate": len(table.degenerate_ids),
            "score_excluded": len(table.excluded_ids),
        }
        corpus_id_set = set(corpus_ids)
        table.entries = {rid: v for rid, v in table.entries.items() if rid in corpus_id_set}
        manifest = select_top_by_score(
            table, args.budget, ctx,
            assignment=assignment if method == "top-km" else None,
            direction=args.direction,
            uniform_quotas=args.uniform_quotas,
        )
    elif method in ("length", "length-km"):
        stream = _stream(args, budget_acct)
        counts: dict[int, int] = {}
        missing = 0
        for record in stream:
            try:
                counts[record.id] = token_count(record, counter=args.counter, scope=args.scope)
            except SiftError:
                if args.coverage == POLICY_STRICT:
                    raise
                missing += 1
        ctx.corpus_digest = stream.corpus_digest
        ctx.corpus_count = stream.records_yielded
        ctx.excluded = {"missing_token_count": missing}
        budget_acct.charge(len(counts) * 16, "token-count map")
        manifest = select_by_length(
            counts, args.budget, ctx,
            assignment=assignment if method == "length-km" else None,
            uniform_quotas=args.uniform_quotas,
        )
    elif method == "kcenter":
        if not args.embeddings:
            raise UsageError("--embeddings is required for method kcenter")
        emb = load_embeddings(args.embeddings)
        budget_acct.charge(emb.matrix.nbytes, "embedding matrix")
        stream = _stream(args, budget_acct)
        corpus_ids = {r.id for r in stream}
        validate_coverage(emb.ids_set(), corpus_ids, args.coverage)
        ctx.corpus_digest = stream.corpus_digest
        ctx.corpus_count = stream.records_yielded
        ctx.inputs.append({"kind": "embeddings", "path": args.embeddings,
                           "digest": emb.source_digest, "provenance": emb.provenance})
        pool: set[int] = set()
        if args.initial_pool:
            pool = set(load_manifest(args.initial_pool).selected_ids)
        candidates = (emb.ids_set() & corpus_ids) - pool
        manifest = select_kcenter(emb, args.budget, ctx, initial_pool=pool, candidates=candidates)
    elif method == "zip":
        stream = _stream(args, budget_acct)
        records = list(stream)
        budget_acct.charge(sum(r.byte_len for r in records), "zip corpus buffer")
        ctx.corpus_digest = stream.corpus_digest
        ctx.corpus_count = stream.records_yielded
        manifest = select_zip(
            records, args.budget, ctx,
            k1=args.k1, k2=args.k2, k3=args.k3,
            window_bytes=args.window_bytes,
            exact=args.exact_recompression,
        )
    else:  # unreachable: argparse bounds the choices
        raise SiftError(f"unknown method {method}")

    manifest.parameters.setdefault("corpus_format", args.format)
    if getattr(args, "dedup", False):
        manifest.parameters["dedup"] = True
    manifest.save(args.manifest)
    log.info("%s: selected %d/%d -> %s", method, len(manifest.selected_ids),
             manifest.budget, args.manifest)
    return 0


def cmd_export(args) -> int:
    manifest = load_manifest(args.manifest)
    stream = _stream(args)
    digest = export_subset(manifest, stream, args.out, fmt=args.format)
    log.info("exported %d records -> %s (digest %s)", len(manifest.selected_ids), args.out, digest)
    return 0


def cmd_report(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.baseline:
        baseline = load_manifest(args.baseline)
    elif args.baseline_seed is not None:
        stream = _stream(args)
        baseline = random_select(
            (r.id for r in stream), len(manifest.selected_ids), seed=args.baseline_seed
        )
        baseline.corpus_digest = stream.corpus_digest
        baseline.corpus_count = stream.records_yielded
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        baseline.save(Path(args.out_dir) / "baseline.manifest.json")
    else:
        raise UsageError("report needs --baseline or --baseline-seed")
    from .report import run_report

    assignment = load_assignment(args.clusters) if args.clusters else None
    run_report(manifest, baseline, _stream(args), assignment, args.out_dir, counter=args.counter)
    return 0


def cmd_validate(args) -> int:
    stream = _stream(args)
    corpus_ids = [r.id for r in stream]
    for path in args.scores:
        kind = args.kind if args.kind != "auto" else _sniff_kind(path)
        if kind not in _LOADERS:
            raise SiftError(f"{path}: unknown score kind {kind!r}")
        store = _LOADERS[kind](path)
        ids = store.ids_set() if kind == "embeddings" else store.ids()
        report = validate_coverage(ids, corpus_ids, args.policy)
        print(json.dumps({
            "path": path,
            "kind": kind,
            "records": len(ids),
            "missing": len(report.missing),
            "extra": report.extra,
            "ok": True,
        }))
    return 0


# ---------------------------------------------------------------------------
# entry


def _apply_config(args, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: config must be a JSON object")
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    for key, value in cfg.items():
        flag = "--" + key.replace("_", "-")
        if flag in given:
            continue  # explicit flags win
        if not hasattr(args, key):
            raise UsageError(f"{args.config}: unknown config key {key!r}")
        setattr(args, key, value)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_config(args, argv)
        threads = args.threads or os.environ.get("SIFT_THREADS")
        if threads:
            os.environ.setdefault("OMP_NUM_THREADS", str(threads))
            os.environ.setdefault("OPENBLAS_NUM_THREADS", str(threads))
        _resolved_config(args)
        return args.func(args)
    except SiftError as exc:
        sys.stderr.write(json.dumps(exc.report()) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
