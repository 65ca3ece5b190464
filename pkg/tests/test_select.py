from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sift.diversity import ClusterAssignment
from sift.errors import ManifestError, SelectionError
from sift.manifest import load_manifest
from sift.scores import ScoreTable
from sift.select import (
    SelectionContext,
    export_subset,
    quota_allocate,
    random_select,
    reservoir_sample,
    select_by_length,
    select_top_by_score,
)

import oracles
from conftest import synthetic_records, write_corpus


def assignment_for(ids, labels, k) -> ClusterAssignment:
    ids = np.asarray(sorted(ids), dtype=np.uint64)
    labels = np.asarray(labels, dtype=np.uint32)
    return ClusterAssignment(
        k=k, ids=ids, labels=labels, centroids=np.zeros((k, 1)),
        inertia=0.0, seed=0, iterations_run=0)


class TestQuotaAllocate:
    def test_exact_proportions(self):
        assert quota_allocate([600, 300, 100], 10) == [6, 3, 1]

    def test_largest_remainders_win(self):
        # floors [1,0,0]; remainders .5, .9, .6 -> two awards to clusters 2 and 3
        assert quota_allocate([5, 3, 2], 3) == [1, 1, 1]

    def test_plain_hamilton_on_capped_example(self):
        # exact shares are [1.0, 49.0]: zero remainders, no caps hit
        assert quota_allocate([2, 98], 50) == [1, 49]
        assert quota_allocate([2, 98], 50) == oracles.hamilton_oracle([2, 98], 50)

    def test_remainder_tie_to_lowest_cluster(self):
        # shares [1.5, 0.5] -> floors [1, 0], tied remainders -> lower index
        assert quota_allocate([3, 1], 2) == [2, 0]

    def test_budget_exceeds_total(self):
        with pytest.raises(SelectionError):
            quota_allocate([1, 2], 4)

    def test_zero_size_clusters_get_nothing(self):
        assert quota_allocate([0, 5, 0, 5], 4) == [0, 2, 0, 2]

    def test_uniform_weights_respect_caps(self):
        # equal weights want [3,3,3] but cluster 0 caps at 1; overflow redistributed
        quotas = quota_allocate([1, 50, 50], 9, weights=[1, 1, 1])
        assert quotas == [1, 4, 4]
        assert sum(quotas) == 9

    @given(
        st.lists(st.integers(0, 500), min_size=1, max_size=40).filter(lambda s: sum(s) > 0),
        st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_fraction_oracle(self, sizes, data):
        budget = data.draw(st.integers(0, sum(sizes)))
        got = quota_allocate(sizes, budget)
        assert got == oracles.hamilton_oracle(sizes, budget)
        assert sum(got) == budget
        assert all(q <= s for q, s in zip(got, sizes))


class TestSelectTopByScore:
    def test_global_top(self):
        table = ScoreTable(method="m", entries={10: 3.0, 20: 2.0, 30: 1.0})
        ctx = SelectionContext(corpus_count=3)
        manifest = select_top_by_score(table, 2, ctx)
        assert manifest.selected_ids == [10, 20]
        assert manifest.method == "top"
        assert manifest.quotas is None

    def test_one_from_each_cluster(self):
        table = ScoreTable(method="m", entries={1: 9.0, 2: 8.0, 3: 1.0, 4: 0.0})
        assign = assignment_for([1, 2, 3, 4], [0, 0, 1, 1], k=2)
        ctx = SelectionContext(corpus_count=4)
        manifest = select_top_by_score(table, 2, ctx, assignment=assign)
        assert manifest.selected_ids == [1, 3]
        assert manifest.quotas == [
            {"cluster": 0, "size": 2, "quota": 1},
            {"cluster": 1, "size": 2, "quota": 1},
        ]

    def test_equal_scores_lowest_id_prefix(self):
        table = ScoreTable(method="m", entries={i: 1.0 for i in range(1, 7)})
        assign = assignment_for(range(1, 7), [0, 0, 0, 1, 1, 1], k=2)
        ctx = SelectionContext(corpus_count=6)
        manifest = select_top_by_score(table, 4, ctx, assignment=assign)
        assert manifest.selected_ids == [1, 2, 4, 5]

    def test_direction_low(self):
        table = ScoreTable(method="m", entries={1: 5.0, 2: 1.0, 3: 3.0}, direction="low")
        ctx = SelectionContext(corpus_count=3)
        manifest = select_top_by_score(table, 2, ctx)
        assert manifest.selected_ids == [2, 3]

    def test_single_cluster_equals_global(self):
        rng = np.random.default_rng(50)
        entries = {int(i): float(rng.uniform()) for i in range(1, 101)}
        table = ScoreTable(method="m", entries=dict(entries))
        ctx = SelectionContext(corpus_count=100)
        global_ids = select_top_by_score(table, 17, ctx).selected_ids
        table2 = ScoreTable(method="m", entries=dict(entries))
        assign = assignment_for(range(1, 101), [0] * 100, k=1)
        km_ids = select_top_by_score(table2, 17, SelectionContext(corpus_count=100),
                                     assignment=assign).selected_ids
        assert global_ids == km_ids

    def test_scaling_scores_keeps_output(self):
        rng = np.random.default_rng(51)
        entries = {int(i): float(rng.uniform(0.1, 5)) for i in range(1, 60)}
        ctx = SelectionContext(corpus_count=59)
        a = select_top_by_score(ScoreTable(method="m", entries=dict(entries)), 10, ctx).selected_ids
        scaled = {k: v * 37.5 for k, v in entries.items()}
        b = select_top_by_score(ScoreTable(method="m", entries=scaled), 10,
                                SelectionContext(corpus_count=59)).selected_ids
        assert a == b

    def test_empty_usable_set(self):
        with pytest.raises(SelectionError):
            select_top_by_score(ScoreTable(method="m", entries={}), 1, SelectionContext())

    def test_shortfall_recorded(self):
        table = ScoreTable(method="m", entries={1: 1.0, 2: 2.0})
        ctx = SelectionContext(corpus_count=10)  # corpus bigger than usable
        manifest = select_top_by_score(table, 5, ctx)
        assert manifest.shortfall == 3
        assert len(manifest.selected_ids) == 2


class TestSelectByLength:
    def test_longest_first_hand_fixture(self):
        counts = {1: 354, 2: 1142, 3: 10}
        assign = assignment_for([1, 2, 3], [0, 0, 0], k=1)
        manifest = select_by_length(counts, 2, SelectionContext(corpus_count=3), assignment=assign)
        assert manifest.selected_ids == [2, 1]
        assert manifest.method == "length-km"

    def test_uniform_lengths_lowest_id_prefix(self):
        counts = {i: 7 for i in range(1, 6)}
        manifest = select_by_length(counts, 3, SelectionContext(corpus_count=5))
        assert manifest.selected_ids == [1, 2, 3]

    def test_proportional_quota_with_tie_rule(self):
        # sizes [3,1], budget 2 -> quotas [2,0]; longest two of cluster 0
        counts = {1: 5, 2: 50, 3: 500, 4: 5000}
        assign = assignment_for([1, 2, 3, 4], [0, 0, 0, 1], k=2)
        manifest = select_by_length(counts, 2, SelectionContext(corpus_count=4), assignment=assign)
        assert [q["quota"] for q in manifest.quotas] == [2, 0]
        assert manifest.selected_ids == [3, 2]


class TestRandomSelect:
    def test_budget_equals_corpus(self):
        manifest = random_select(range(100), 100, seed=1)
        assert sorted(manifest.selected_ids) == list(range(100))

    def test_deterministic_reruns_byte_identical(self, tmp_path):
        ids = list(range(1000))
        a = random_select(ids, 50, seed=9, ctx=SelectionContext(corpus_digest="d", corpus_count=1000))
        b = random_select(ids, 50, seed=9, ctx=SelectionContext(corpus_digest="d", corpus_count=1000))
        assert a.to_text() == b.to_text()
        a.save(tmp_path / "a.json")
        b.save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_different_seeds_differ(self):
        a = random_select(range(1000), 50, seed=1)
        b = random_select(range(1000), 50, seed=2)
        assert a.selected_ids != b.selected_ids

    def test_budget_exceeds_corpus(self):
        with pytest.raises(SelectionError):
            random_select(range(10), 11, seed=0)

    def test_output_in_stream_order(self):
        manifest = random_select(range(0, 10_000, 7), 64, seed=3)
        assert manifest.selected_ids == sorted(manifest.selected_ids)

    def test_prng_recorded(self):
        manifest = random_select(range(10), 2, seed=0)
        assert manifest.prng == "numpy.random.PCG64"

    def test_reservoir_uniformity_coarse(self):
        # fine-grained binomial/chi-square gate lives in the acceptance suite
        counts = np.zeros(100)
        trials = 2000
        for t in range(trials):
            rng = np.random.Generator(np.random.PCG64(10_000 + t))
            picked, n = reservoir_sample(range(100), 10, rng)
            assert n == 100 and len(picked) == 10
            counts[picked] += 1
        freqs = counts / trials
        assert abs(freqs.mean() - 0.1) < 1e-12
        assert np.all(np.abs(freqs - 0.1) < 5 * np.sqrt(0.1 * 0.9 / trials))


class TestExportSubset:
    def test_export_in_manifest_order(self, tmp_path):
        records = synthetic_records(20, seed=8)
        manifest = random_select([r.id for r in records], 5, seed=4)
        out = tmp_path / "subset.jsonl"
        export_subset(manifest, records, out)
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 5
        from sift.corpus import ingest

        path = write_corpus(tmp_path / "c.jsonl", records)
        exported = list(ingest(out))
        assert [r.id for r in exported] == manifest.selected_ids

    def test_reexport_byte_identical(self, tmp_path):
        records = synthetic_records(10, seed=9)
        manifest = random_select([r.id for r in records], 4, seed=5)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_subset(manifest, records, a)
        export_subset(manifest, records, b)
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.jsonl.digest").read_text() == (tmp_path / "b.jsonl.digest").read_text()

    def test_tampered_id_errors(self, tmp_path):
        records = synthetic_records(5, seed=10)
        manifest = random_select([r.id for r in records], 2, seed=6)
        manifest.selected_ids[0] = 0xDEADBEEF
        with pytest.raises(ManifestError, match="00000000deadbeef"):
            export_subset(manifest, records, tmp_path / "x.jsonl")


class TestManifestFile:
    def test_roundtrip_and_verify(self, tmp_path):
        manifest = random_select(range(50), 5, seed=2,
                                 ctx=SelectionContext(corpus_digest="abc", corpus_count=50))
        path = tmp_path / "m.json"
        manifest.save(path)
        got = load_manifest(path)
        assert got.selected_ids == manifest.selected_ids
        assert got.seed == 2
        assert got.corpus_digest == "abc"

    def test_truncation_never_verifies(self, tmp_path):
        manifest = random_select(range(50), 5, seed=2)
        path = tmp_path / "m.json"
        manifest.save(path)
        data = path.read_bytes()
        # any cut that loses digest or body bytes must fail verification
        for cut in (len(data) - 2, len(data) // 2, 3):
            (tmp_path / "t.json").write_bytes(data[:cut])
            with pytest.raises(ManifestError):
                load_manifest(tmp_path / "t.json")

    def test_tampered_body_never_verifies(self, tmp_path):
        manifest = random_select(range(50), 5, seed=2)
        path = tmp_path / "m.json"
        manifest.save(path)
        text = path.read_text().replace('"seed":2', '"seed":3')
        path.write_text(text)
        with pytest.raises(ManifestError, match="digest mismatch"):
            load_manifest(path)
