"""Per-record quality scorers: ifd, selectit (token/sentence/model), entropy, less.

All scorers are pure functions of immutable stores and carry their selection
direction in the resulting ScoreTable, so orchestration never has to guess
whether high means good. Records that cannot be scored (zero-norm gradients,
all-zero log-probs) are excluded and listed, never given sentinel values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRecordError, SiftError
from .scores import (
    DIRECTION_HIGH,
    GradientFeatureStore,
    LogProbStore,
    RatingProbe,
    ScoreTable,
)

LN2 = math.log(2.0)

METHOD_IFD = "ifd"
METHOD_SELECTIT_TOKEN = "selectit_token"
METHOD_SELECTIT_SENT = "selectit_sent"
METHOD_SELECTIT_MODEL = "selectit_model"
METHOD_ENTROPY = "entropy"
METHOD_LESS = "less"

DEFAULT_ALPHA = 0.2


@dataclass
class QualityScore:
    method: str
    value: float
    aux: dict = field(default_factory=dict)


def ifd_score(conditioned: np.ndarray, unconditioned: np.ndarray) -> QualityScore:
    """Ratio of conditioned to unconditioned mean answer negative log-likelihood.

    High values mean the instruction barely helps the model produce the
    answer. Degenerate when either mean NLL is zero: a zero denominator is a
    division by zero, and a zero numerator would break the value > 0 contract.
    """
    conditioned = np.asarray(conditioned, dtype=np.float64)
    unconditioned = np.asarray(unconditioned, dtype=np.float64)
    if conditioned.shape != unconditioned.shape or conditioned.ndim != 1:
        raise SiftError(
            f"log-prob arrays must be equal-length 1-D, got {conditioned.shape} "
            f"and {unconditioned.shape}"
        )
    if len(conditioned) == 0:
        raise SiftError("empty log-prob arrays")
    cond_nll = float(np.mean(-conditioned))
    uncond_nll = float(np.mean(-unconditioned))
    if uncond_nll == 0.0:
        raise DegenerateRecordError("unconditioned log-probs are all zero (mean NLL 0)")
    if cond_nll == 0.0:
        raise DegenerateRecordError("conditioned log-probs are all zero (mean NLL 0)")
    return QualityScore(
        method=METHOD_IFD,
        value=cond_nll / uncond_nll,
        aux={"conditioned_mean_nll": cond_nll, "unconditioned_mean_nll": uncond_nll},
    )


def softmax(values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64) / temperature
    shifted = values - np.max(values)
    exp = np.exp(shifted)
    return exp / exp.sum()


def selectit_token(
    probe_row: np.ndarray, temperature: float = 1.0, skip_softmax: bool = False
) -> QualityScore:
    """Token-level rating score: confidence-weighted argmax of the score tokens.

    The raw next-token values for score tokens 1..K are softmaxed exactly once
    (``skip_softmax`` is a hook for feeding pre-normalized distributions in
    oracle tests). The winning 1-based score index is scaled by the mean
    absolute gap between its probability and every other score token's, so a
    flat distribution scores 0 regardless of the argmax.
    """
    raw = np.asarray(probe_row, dtype=np.float64)
    k = len(raw)
    if k < 2:
        raise SiftError(f"need at least 2 score tokens, got {k}")
    probs = raw if skip_softmax else softmax(raw, temperature)
    base_idx = int(np.argmax(probs))  # ties -> lowest index
    disparity = float(np.sum(np.abs(probs - probs[base_idx]))) / (k - 1)
    value = (base_idx + 1) * disparity
    return QualityScore(
        method=METHOD_SELECTIT_TOKEN,
        value=value,
        aux={"base_score": base_idx + 1, "disparity": disparity},
    )


def selectit_sentence(token_scores: np.ndarray, alpha: float = DEFAULT_ALPHA) -> QualityScore:
    """Mean token-level score across rating prompts, damped by their spread.

    Std is the population standard deviation over the fixed prompt set.
    alpha = 0 collapses to the plain mean.
    """
    scores = np.asarray(token_scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) == 0:
        raise SiftError("token_scores must be a non-empty 1-D array")
    if alpha < 0:
        raise SiftError(f"alpha must be >= 0, got {alpha}")
    avg = float(np.mean(scores))
    std = float(np.std(scores))  # population
    return QualityScore(
        method=METHOD_SELECTIT_SENT,
        value=avg / (1.0 + alpha * std),
        aux={"avg": avg, "std": std, "alpha": alpha, "std_kind": "population"},
    )


def selectit_model(sent_scores: np.ndarray, betas: np.ndarray) -> QualityScore:
    """Sentence-level scores from several backbones, weighted by parameter count."""
    scores = np.asarray(sent_scores, dtype=np.float64)
    weights = np.asarray(betas, dtype=np.float64)
    if scores.shape != weights.shape or scores.ndim != 1 or len(scores) == 0:
        raise SiftError(
            f"sent_scores and betas must be equal-length 1-D, got {scores.shape} and {weights.shape}"
        )
    if np.any(weights <= 0):
        raise SiftError("betas must be positive")
    value = float(np.sum(weights / weights.sum() * scores))
    return QualityScore(
        method=METHOD_SELECTIT_MODEL,
        value=value,
        aux={"betas": weights.tolist()},
    )


def entropy_score(conditioned: np.ndarray) -> QualityScore:
    """Total bits the scoring model spends on the response tokens.

    Natural-log inputs are converted to bits here, at the single conversion
    point. The value is a sum, not a mean, so it is additive over
    concatenation and a certain token (log-prob 0) contributes nothing.
    """
    logprobs = np.asarray(conditioned, dtype=np.float64)
    if logprobs.ndim != 1 or len(logprobs) == 0:
        raise SiftError("empty log-prob array")
    value = float(np.sum(-logprobs) / LN2)
    return QualityScore(method=METHOD_ENTROPY, value=value, aux={"tokens": len(logprobs)})


def less_influence(features: GradientFeatureStore, record_id: int) -> QualityScore:
    """Learning-rate-weighted cosine similarity to each validation set's gradients.

    For each validation set, sums eta_i * cos(val_grad_i, train_grad_i) over
    checkpoints; the score is the max across validation sets. Zero-norm
    vectors make the cosine undefined and mark the record degenerate.
    """
    if record_id not in features.entries:
        raise SiftError(f"record {record_id:016x} not present in gradient store")
    grads = features.entries[record_id]
    train_norms = np.linalg.norm(grads, axis=1)
    if np.any(train_norms == 0.0):
        raise DegenerateRecordError(
            f"zero-norm training gradient for record {record_id:016x}", record_id=record_id
        )
    per_set: dict[str, float] = {}
    for name, val in features.validation_sets.items():
        val_norms = np.linalg.norm(val, axis=1)
        if np.any(val_norms == 0.0):
            raise DegenerateRecordError(f"zero-norm validation gradient in set {name!r}")
        cosines = np.sum(val * grads, axis=1) / (val_norms * train_norms)
        per_set[name] = float(np.sum(features.learning_rates * cosines))
    best = max(per_set.values())
    return QualityScore(method=METHOD_LESS, value=best, aux={"per_validation_set": per_set})


# ---------------------------------------------------------------------------
# batch drivers: stores in, ScoreTable out


def score_ifd(store: LogProbStore, drop_ge_1: bool = False) -> ScoreTable:
    """IFD over every record in the store.

    ``drop_ge_1`` additionally excludes records whose instruction does not
    lower the answer NLL at all (score >= 1); those ids land in excluded_ids.
    Default keeps them and ranks purely by score.
    """
    entries: dict[int, float] = {}
    degenerate: list[int] = []
    excluded: list[int] = []
    for rid in sorted(store.entries):
        cond, uncond = store.entries[rid]
        try:
            score = ifd_score(cond, uncond)
        except DegenerateRecordError:
            degenerate.append(rid)
            continue
        if drop_ge_1 and score.value >= 1.0:
            excluded.append(rid)
            continue
        entries[rid] = score.value
    return ScoreTable(
        method=METHOD_IFD,
        entries=entries,
        direction=DIRECTION_HIGH,
        provenance=store.provenance,
        params={"drop_ifd_ge_1": drop_ge_1},
        degenerate_ids=degenerate,
        excluded_ids=excluded,
    )


def score_entropy(store: LogProbStore) -> ScoreTable:
    entries = {
        rid: entropy_score(cond).value for rid, (cond, _) in sorted(store.entries.items())
    }
    return ScoreTable(
        method=METHOD_ENTROPY,
        entries=entries,
        direction=DIRECTION_HIGH,
        provenance=store.provenance,
    )


def sentence_scores(probe: RatingProbe, alpha: float = DEFAULT_ALPHA) -> dict[int, float]:
    """Token-level score per rating prompt, aggregated to one sentence score."""
    out: dict[int, float] = {}
    for rid, mat in probe.entries.items():
        token_vals = [selectit_token(row).value for row in mat]
        out[rid] = selectit_sentence(np.asarray(token_vals), alpha=alpha).value
    return out


def score_selectit(
    probes: list[RatingProbe],
    alpha: float = DEFAULT_ALPHA,
    betas: list[float] | None = None,
) -> ScoreTable:
    """SelectIT over one probe store per backbone.

    One store yields sentence-level scores; several stores are combined at
    model level with ``betas`` (parameter counts, one per store, in order).
    Only records present in every store are scored.
    """
    if not probes:
        raise SiftError("need at least one rating-probe store")
    if len(probes) == 1:
        table = sentence_scores(probes[0], alpha=alpha)
        return ScoreTable(
            method=METHOD_SELECTIT_SENT,
            entries=table,
            direction=DIRECTION_HIGH,
            provenance=probes[0].provenance,
            params={"alpha": alpha},
        )
    if betas is None or len(betas) != len(probes):
        raise SiftError(f"model-level aggregation needs one beta per probe store ({len(probes)})")
    per_model = [sentence_scores(p, alpha=alpha) for p in probes]
    common = set(per_model[0])
    for table in per_model[1:]:
        common &= set(table)
    weights = np.asarray(betas, dtype=np.float64)
    entries = {
        rid: selectit_model(np.asarray([t[rid] for t in per_model]), weights).value
        for rid in sorted(common)
    }
    return ScoreTable(
        method=METHOD_SELECTIT_MODEL,
        entries=entries,
        direction=DIRECTION_HIGH,
        provenance="; ".join(p.provenance for p in probes if p.provenance),
        params={"alpha": alpha, "betas": list(map(float, betas))},
    )


def score_less(features: GradientFeatureStore) -> ScoreTable:
    entries: dict[int, float] = {}
    degenerate: list[int] = []
    for rid in sorted(features.entries):
        try:
            entries[rid] = less_influence(features, rid).value
        except DegenerateRecordError:
            degenerate.append(rid)
    return ScoreTable(
        method=METHOD_LESS,
        entries=entries,
        direction=DIRECTION_HIGH,
        provenance=features.provenance,
        degenerate_ids=degenerate,
    )
