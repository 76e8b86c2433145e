import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit import fairness as fs


def make_dataset(rng, m, K=1):
    return fs.Dataset(
        labels=rng.integers(0, 2, m),
        attributes=rng.integers(0, 2, (m, K)),
        scores=rng.random(m),
    )


class TestExtract:
    def test_four_records_partition(self):
        ds = fs.Dataset(
            labels=[0, 1, 0, 1],
            attributes=[[0], [0], [1], [1]],
            scores=[0.9, 0.1, 0.2, 0.8],
        )
        stats = fs.extract_local_stats(ds)
        assert set(stats.counts.ravel().tolist()) <= {0, 1}
        assert stats.counts.sum() == 4
        assert stats.counts[0, 0, 1] == 1  # a=0, y=0, score .9 -> yhat 1
        assert stats.counts[1, 1, 1] == 1

    def test_threshold_tie_predicts_zero(self):
        ds = fs.Dataset(labels=[0, 1], attributes=[[0], [1]], scores=[0.5, 0.5])
        stats = fs.extract_local_stats(ds)
        assert stats.counts[:, :, 1].sum() == 0

    def test_counts_match_naive_recount(self):
        rng = np.random.default_rng(0)
        ds = make_dataset(rng, 1000)
        stats = fs.extract_local_stats(ds)
        naive = {}
        for a, y, s in zip(ds.attributes[:, 0], ds.labels, ds.scores):
            key = (int(a), int(y), int(s > 0.5))
            naive[key] = naive.get(key, 0) + 1
        for key, v in naive.items():
            assert stats.counts[key] == v

    def test_empty_dataset_error(self):
        ds = fs.Dataset(labels=[], attributes=np.zeros((0, 1)), scores=[])
        with pytest.raises(fs.EmptyDatasetError):
            fs.extract_local_stats(ds)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 300), st.integers(0, 2**31))
    def test_counts_always_partition_sample(self, m, seed):
        rng = np.random.default_rng(seed)
        ds = make_dataset(rng, m)
        stats = fs.extract_local_stats(ds)
        assert stats.counts.sum() == m

    def test_marginalization_reproduces_counts(self):
        rng = np.random.default_rng(1)
        ds = make_dataset(rng, 500, K=3)
        stats = fs.extract_local_stats(ds, intersectional=True)
        np.testing.assert_array_equal(stats.marginal_first_attribute(), stats.counts)


def agg_from_counts(counts):
    return fs.AggregateStatistics.exact(np.array(counts, dtype=np.int64))


class TestDpViolation:
    def test_direct_ratio(self):
        # group0: 6/10 positive, group1: 2/10
        counts = np.zeros((2, 2, 2), dtype=np.int64)
        counts[0, 0, 1] = 6
        counts[0, 0, 0] = 4
        counts[1, 0, 1] = 2
        counts[1, 0, 0] = 8
        assert fs.dp_violation(agg_from_counts(counts)) == pytest.approx(0.4)

    def test_identical_groups(self):
        counts = np.zeros((2, 2, 2), dtype=np.int64)
        counts[:, 0, 1] = 3
        counts[:, 0, 0] = 7
        assert fs.dp_violation(agg_from_counts(counts)) == 0.0

    def test_degenerate_error(self):
        agg = fs.AggregateStatistics(
            noised_fixed_point=np.zeros((2, 2, 2), dtype=np.int64),
            fixed_point_scale=10**6,
        )
        with pytest.raises(fs.DegenerateGroupError):
            fs.dp_violation(agg)
        assert fs.dp_violation(agg, allow_degenerate=True) == 0.0


class TestEoViolation:
    def test_tpr_fpr_max(self):
        counts = np.zeros((2, 2, 2), dtype=np.int64)
        # TPRs 0.9 vs 0.6; FPRs 0.2 vs 0.2
        counts[0, 1, 1], counts[0, 1, 0] = 9, 1
        counts[1, 1, 1], counts[1, 1, 0] = 6, 4
        counts[0, 0, 1], counts[0, 0, 0] = 2, 8
        counts[1, 0, 1], counts[1, 0, 0] = 2, 8
        assert fs.eo_violation(agg_from_counts(counts)) == pytest.approx(0.3)

    def test_equal_confusion_tables(self):
        counts = np.zeros((2, 2, 2), dtype=np.int64)
        counts[:, 1, 1], counts[:, 1, 0] = 5, 5
        counts[:, 0, 1], counts[:, 0, 0] = 1, 9
        assert fs.eo_violation(agg_from_counts(counts)) == 0.0

    def test_matches_stratified_recount(self):
        rng = np.random.default_rng(2)
        ds = make_dataset(rng, 2000)
        stats = fs.extract_local_stats(ds)
        agg = fs.AggregateStatistics.exact(stats.counts)
        oracle = fs.brute_force_metrics(ds)
        assert fs.eo_violation(agg) == pytest.approx(oracle.eo, abs=0)
        assert fs.dp_violation(agg) == pytest.approx(oracle.dp, abs=0)


class TestIntersectional:
    def test_k1_reduces_to_dp(self):
        rng = np.random.default_rng(3)
        ds = make_dataset(rng, 800, K=1)
        stats = fs.extract_local_stats(ds, intersectional=True)
        value, _ = fs.intersectional_violation(stats.intersectional_counts, 1)
        agg = fs.AggregateStatistics.exact(stats.counts)
        assert value == pytest.approx(fs.dp_violation(agg), abs=1e-15)

    def test_equal_rates_zero(self):
        groups = {
            bits: np.array([[5, 5], [5, 5]])
            for bits in [(0, 0), (0, 1), (1, 0), (1, 1)]
        }
        value, _ = fs.intersectional_violation(groups, 2)
        assert value == 0.0

    def test_zero_noise_equals_pooled_enumeration(self):
        rng = np.random.default_rng(4)
        datasets = [make_dataset(rng, 400, K=2) for _ in range(6)]
        pooled = fs.pool_datasets(datasets)
        stats = [fs.extract_local_stats(d, intersectional=True) for d in datasets]
        merged = {}
        for s in stats:
            for bits, yy in s.intersectional_counts.items():
                merged[bits] = merged.get(bits, np.zeros((2, 2), dtype=np.int64)) + yy
        value, bound = fs.intersectional_violation(merged, 2)
        # pooled brute-force enumeration over the 2^K groups
        yhat = fs.predict(pooled.scores)
        rates = []
        for bits in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            mask = np.all(pooled.attributes == np.array(bits), axis=1)
            rates.append(yhat[mask].mean())
        assert value == pytest.approx(max(rates) - min(rates), abs=1e-12)
        assert bound == 0.0

    def test_error_bound_formula(self):
        groups = {
            (0,): np.array([[10, 0], [0, 0]]),
            (1,): np.array([[3, 1], [1, 1]]),
        }
        _, bound = fs.intersectional_violation(groups, 1, sigma_noise=2.0)
        assert bound == pytest.approx(1 * 2.0 / 6)

    def test_empty_group_listed(self):
        groups = {(0, 0): np.array([[1, 1], [1, 1]])}
        with pytest.raises(fs.EmptyGroupError) as err:
            fs.intersectional_violation(groups, 2)
        assert "(0, 1)" in str(err.value)

    def test_k_limit(self):
        with pytest.raises(fs.FairnessError):
            fs.intersectional_violation({}, 4)


class TestBruteForce:
    def test_self_consistency_with_zero_noise_aggregate(self):
        rng = np.random.default_rng(5)
        ds = make_dataset(rng, 1500)
        oracle = fs.brute_force_metrics(ds)
        agg = fs.AggregateStatistics.exact(fs.extract_local_stats(ds).counts)
        assert oracle.dp == fs.dp_violation(agg)
        assert oracle.eo == fs.eo_violation(agg)

    @pytest.mark.parametrize("m,seed", [(10**3, 6), (10**5, 7)])
    def test_streaming_vs_sorted(self, m, seed):
        rng = np.random.default_rng(seed)
        ds = make_dataset(rng, m)
        a = fs.brute_force_metrics(ds)
        b = fs.brute_force_metrics_sorted(ds)
        assert a.dp == b.dp
        assert a.eo == b.eo
        assert a.per_group == b.per_group

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        ds = make_dataset(rng, 700)
        perm = rng.permutation(700)
        shuffled = fs.Dataset(
            labels=ds.labels[perm],
            attributes=ds.attributes[perm],
            scores=ds.scores[perm],
        )
        assert fs.brute_force_metrics(ds).as_tuple() == \
            fs.brute_force_metrics(shuffled).as_tuple()


class TestReport:
    def test_build_and_serialize(self):
        rng = np.random.default_rng(9)
        ds = make_dataset(rng, 400)
        agg = fs.AggregateStatistics.exact(fs.extract_local_stats(ds).counts)
        report = fs.build_report(agg, sigma=1.0, n_participants=5, delta_fair=0.05)
        assert not report.degenerate
        assert 0 <= report.dp_violation <= 1
        assert report.accuracy_epsilon_fair > 0
        import json
        parsed = json.loads(report.to_json())
        assert len(parsed["noised_counts_fixed_point"]) == 8
        assert "dp_violation" in report.csv_row()

    def test_degenerate_flagged(self):
        noised = np.ones((2, 2, 2), dtype=np.int64) * 10**6
        noised[0] = -5  # group-0 denominator pushed below the floor by noise
        agg = fs.AggregateStatistics(noised_fixed_point=noised, fixed_point_scale=10**6)
        report = fs.build_report(agg)
        assert report.degenerate

    def test_cell_zero_is_not_degenerate(self):
        noised = np.ones((2, 2, 2), dtype=np.int64) * 10**6
        noised[0, 0, 0] = 0  # a legitimately empty cell
        agg = fs.AggregateStatistics(noised_fixed_point=noised, fixed_point_scale=10**6)
        assert not fs.build_report(agg).degenerate
