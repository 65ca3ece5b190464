from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sift.errors import DegenerateRecordError
from sift.quality import (
    entropy_score,
    ifd_score,
    less_influence,
    score_ifd,
    score_less,
    score_selectit,
    selectit_model,
    selectit_sentence,
    selectit_token,
)
from sift.scores import GradientFeatureStore, LogProbStore, RatingProbe

import oracles

REL = 1e-9


def rel_close(a, b):
    return math.isclose(a, b, rel_tol=REL, abs_tol=1e-12)


class TestIfd:
    def test_identical_arrays_give_one(self):
        assert ifd_score(np.array([-1.0, -1.0]), np.array([-1.0, -1.0])).value == 1.0

    def test_hand_ratio_two(self):
        score = ifd_score(np.array([-2.0, -2.0]), np.array([-1.0, -1.0]))
        assert score.value == 2.0  # mean NLL ratio 2/1, by hand
        assert score.aux["conditioned_mean_nll"] == 2.0
        assert score.aux["unconditioned_mean_nll"] == 1.0

    def test_duplication_invariance(self):
        cond = np.array([-0.5, -1.5, -0.25])
        uncond = np.array([-1.0, -2.0, -0.75])
        once = ifd_score(cond, uncond).value
        twice = ifd_score(np.tile(cond, 2), np.tile(uncond, 2)).value
        assert rel_close(once, twice)

    def test_all_zero_unconditioned_degenerate(self):
        with pytest.raises(DegenerateRecordError):
            ifd_score(np.array([-1.0]), np.array([0.0]))

    def test_all_zero_conditioned_degenerate(self):
        with pytest.raises(DegenerateRecordError):
            ifd_score(np.array([0.0]), np.array([-1.0]))

    @given(st.integers(0, 10_000), st.permutations(list(range(6))))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance(self, seed, perm):
        rng = np.random.default_rng(seed)
        cond = -rng.uniform(0.01, 5.0, size=6)
        uncond = -rng.uniform(0.01, 5.0, size=6)
        base = ifd_score(cond, uncond).value
        assert rel_close(base, ifd_score(cond[perm], uncond[perm]).value)


class TestSelectitToken:
    def test_prenormalized_hand_value(self):
        score = selectit_token(np.array([0.1, 0.1, 0.1, 0.1, 0.6]), skip_softmax=True)
        assert score.aux["base_score"] == 5
        assert rel_close(score.aux["disparity"], 0.5)
        assert rel_close(score.value, 2.5)

    def test_uniform_scores_zero_with_lowest_tie(self):
        score = selectit_token(np.full(5, 0.2), skip_softmax=True)
        assert score.aux["base_score"] == 1
        assert score.value == 0.0

    def test_prenormalized_second_hand_value(self):
        score = selectit_token(np.array([0.7, 0.1, 0.1, 0.05, 0.05]), skip_softmax=True)
        assert score.aux["base_score"] == 1
        assert rel_close(score.value, 0.625)  # (0.6+0.6+0.65+0.65)/4 * 1

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            raw = rng.normal(size=5) * 3
            a = selectit_token(raw).value
            b = selectit_token(raw + 12.5).value
            assert rel_close(a, b)

    def test_value_bounded_by_k(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            k = int(rng.integers(2, 9))
            value = selectit_token(rng.normal(size=k)).value
            assert 0.0 <= value <= k


class TestSelectitSentence:
    def test_zero_deviation(self):
        assert selectit_sentence(np.array([2.5, 2.5, 2.5]), alpha=0.2).value == 2.5

    def test_hand_value_population_std(self):
        # 2 / (1 + 0.2 * sqrt(2/3)), population std over the fixed prompt set
        expected = 2 / (1 + 0.2 * math.sqrt(2 / 3))
        score = selectit_sentence(np.array([1.0, 2.0, 3.0]), alpha=0.2)
        assert rel_close(score.value, expected)
        assert score.value == pytest.approx(1.7192479804406606, rel=1e-12)
        assert score.aux["std_kind"] == "population"

    def test_alpha_zero_is_plain_mean(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            xs = rng.normal(size=rng.integers(1, 9))
            assert rel_close(selectit_sentence(xs, alpha=0.0).value, float(np.mean(xs)))

    def test_positive_scaling_monotone(self):
        # Avg and Std both scale linearly with c, so the damped mean is
        # strictly increasing in c for positive scores; exact c-linearity
        # holds only at alpha=0 because the 1 in the denominator does not scale.
        rng = np.random.default_rng(3)
        for _ in range(50):
            xs = rng.uniform(0.1, 5.0, size=5)
            c = float(rng.uniform(1.0 + 1e-6, 10.0))
            a = selectit_sentence(xs, alpha=0.2).value
            b = selectit_sentence(c * xs, alpha=0.2).value
            assert b > a
            a0 = selectit_sentence(xs, alpha=0.0).value
            b0 = selectit_sentence(c * xs, alpha=0.0).value
            assert math.isclose(b0, c * a0, rel_tol=1e-9)


class TestSelectitModel:
    def test_single_model_identity(self):
        assert selectit_model(np.array([3.3]), np.array([8.0])).value == 3.3

    def test_hand_weighted_mean(self):
        value = selectit_model(np.array([2.0, 3.0]), np.array([1.5, 7.0])).value
        assert rel_close(value, 24 / 8.5)

    def test_equal_betas_arithmetic_mean(self):
        xs = np.array([1.0, 2.0, 6.0])
        value = selectit_model(xs, np.array([4.0, 4.0, 4.0])).value
        assert rel_close(value, 3.0)


class TestEntropy:
    def test_half_probability_tokens(self):
        assert entropy_score(np.full(4, math.log(0.5))).value == pytest.approx(4.0, rel=REL)

    def test_hand_bits(self):
        value = entropy_score(np.array([math.log(0.25), math.log(0.5)])).value
        assert rel_close(value, 3.0)

    def test_certain_token_adds_nothing(self):
        base = np.array([math.log(0.25), math.log(0.5)])
        with_cert = np.append(base, 0.0)
        assert rel_close(entropy_score(base).value, entropy_score(with_cert).value)

    def test_additive_over_concatenation(self):
        rng = np.random.default_rng(4)
        a = -rng.uniform(0.01, 3, size=5)
        b = -rng.uniform(0.01, 3, size=7)
        assert rel_close(
            entropy_score(np.concatenate([a, b])).value,
            entropy_score(a).value + entropy_score(b).value,
        )


def _store(lrs, train, vals) -> GradientFeatureStore:
    train = {k: np.asarray(v, dtype=float) for k, v in train.items()}
    vals = {k: np.asarray(v, dtype=float) for k, v in vals.items()}
    dim = next(iter(train.values())).shape[1]
    return GradientFeatureStore(
        learning_rates=np.asarray(lrs, dtype=float), entries=train,
        validation_sets=vals, dim=dim)


class TestLess:
    def test_identical_unit_vectors(self):
        store = _store([1.0], {1: [[1.0, 0.0]]}, {"v": [[1.0, 0.0]]})
        assert less_influence(store, 1).value == pytest.approx(1.0, rel=REL)

    def test_orthogonal_vectors(self):
        store = _store([1.0], {1: [[1.0, 0.0]]}, {"v": [[0.0, 1.0]]})
        assert less_influence(store, 1).value == pytest.approx(0.0, abs=1e-12)

    def test_two_checkpoints_hand_value(self):
        # cosines +1 and -1 under etas 0.1 and 0.2 -> 0.1 - 0.2 = -0.1
        store = _store(
            [0.1, 0.2],
            {1: [[2.0, 0.0], [0.0, 3.0]]},
            {"v": [[5.0, 0.0], [0.0, -1.0]]},
        )
        assert less_influence(store, 1).value == pytest.approx(-0.1, rel=REL)

    def test_max_over_validation_sets(self):
        store = _store(
            [1.0],
            {1: [[1.0, 0.0]]},
            {"a": [[0.0, 1.0]], "b": [[1.0, 1.0]]},
        )
        score = less_influence(store, 1)
        assert score.value == pytest.approx(math.cos(math.pi / 4), rel=REL)
        assert set(score.aux["per_validation_set"]) == {"a", "b"}

    def test_zero_norm_gradient_degenerate(self):
        store = _store([1.0], {1: [[0.0, 0.0]]}, {"v": [[1.0, 0.0]]})
        with pytest.raises(DegenerateRecordError):
            less_influence(store, 1)

    def test_rescaling_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            grads = rng.normal(size=(3, 8))
            vals = rng.normal(size=(3, 8))
            base = less_influence(
                _store([0.1, 0.2, 0.3], {1: grads}, {"v": vals}), 1).value
            scaled = less_influence(
                _store([0.1, 0.2, 0.3], {1: grads * 7.25}, {"v": vals}), 1).value
            assert math.isclose(base, scaled, rel_tol=1e-9, abs_tol=1e-12)


class TestOracleAgreement:
    """Brute-force transcriptions agree with the implementations to 1e-9
    relative on randomized inputs (the full 1000-case run lives in the
    acceptance suite; these are fast spot checks)."""

    N = 200

    def test_ifd(self):
        rng = np.random.default_rng(100)
        for _ in range(self.N):
            n = int(rng.integers(1, 30))
            cond = -rng.uniform(1e-3, 8, size=n)
            uncond = -rng.uniform(1e-3, 8, size=n)
            assert rel_close(ifd_score(cond, uncond).value,
                             oracles.ifd_oracle(cond.tolist(), uncond.tolist()))

    def test_token(self):
        rng = np.random.default_rng(101)
        for _ in range(self.N):
            k = int(rng.integers(2, 10))
            raw = rng.normal(size=k) * 2
            assert rel_close(selectit_token(raw).value, oracles.token_oracle(raw.tolist()))

    def test_sentence(self):
        rng = np.random.default_rng(102)
        for _ in range(self.N):
            xs = rng.uniform(0, 5, size=int(rng.integers(1, 12)))
            alpha = float(rng.uniform(0, 1))
            assert rel_close(selectit_sentence(xs, alpha).value,
                             oracles.sent_oracle(xs.tolist(), alpha))

    def test_model(self):
        rng = np.random.default_rng(103)
        for _ in range(self.N):
            n = int(rng.integers(1, 6))
            xs = rng.uniform(0, 5, size=n)
            betas = rng.uniform(0.5, 70, size=n)
            assert rel_close(selectit_model(xs, betas).value,
                             oracles.model_oracle(xs.tolist(), betas.tolist()))

    def test_entropy(self):
        rng = np.random.default_rng(104)
        for _ in range(self.N):
            xs = -rng.uniform(0, 9, size=int(rng.integers(1, 50)))
            assert rel_close(entropy_score(xs).value, oracles.entropy_oracle(xs.tolist()))

    def test_less(self):
        rng = np.random.default_rng(105)
        for _ in range(self.N):
            ckpts = int(rng.integers(1, 5))
            dim = int(rng.integers(2, 10))
            lrs = rng.uniform(0.01, 0.5, size=ckpts)
            grads = rng.normal(size=(ckpts, dim))
            vals = {f"v{j}": rng.normal(size=(ckpts, dim)) for j in range(int(rng.integers(1, 4)))}
            got = less_influence(_store(lrs, {1: grads}, vals), 1).value
            want, _ = oracles.less_oracle(
                lrs.tolist(), grads.tolist(), {k: v.tolist() for k, v in vals.items()})
            assert rel_close(got, want)


class TestBatchDrivers:
    def test_score_ifd_drop_ge_1(self):
        store = LogProbStore(entries={
            1: (np.array([-2.0]), np.array([-1.0])),   # ifd 2.0
            2: (np.array([-0.5]), np.array([-1.0])),   # ifd 0.5
            3: (np.array([-1.0]), np.array([0.0])),    # degenerate
        })
        table = score_ifd(store)
        assert set(table.entries) == {1, 2}
        assert table.degenerate_ids == [3]
        table = score_ifd(store, drop_ge_1=True)
        assert set(table.entries) == {2}
        assert table.excluded_ids == [1]
        assert table.direction == "high"

    def test_score_selectit_sentence_vs_model(self):
        mat = np.array([[0.1, 0.9], [0.5, 0.5]])
        probe_a = RatingProbe(entries={1: mat}, k_prompts=2, k_scores=2)
        probe_b = RatingProbe(entries={1: mat * 0.5}, k_prompts=2, k_scores=2)
        sent = score_selectit([probe_a])
        assert sent.method == "selectit_sent"
        combined = score_selectit([probe_a, probe_b], betas=[1.5, 7.0])
        assert combined.method == "selectit_model"
        assert set(combined.entries) == {1}

    def test_score_less_collects_degenerates(self):
        store = _store(
            [1.0],
            {1: [[1.0, 0.0]], 2: [[0.0, 0.0]]},
            {"v": [[1.0, 0.0]]},
        )
        table = score_less(store)
        assert set(table.entries) == {1}
        assert table.degenerate_ids == [2]
