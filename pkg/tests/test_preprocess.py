import numpy as np
import pytest

from pentraj.datamodel import ConditionLabel, TrialRecord
from pentraj.preprocess import drop_degenerate_units, filter_trial, median_filter3


def make_trial(values, trial_id="t", style=0):
    return TrialRecord(trial_id, ConditionLabel(style, 0, 0), 0, np.asarray(values, dtype=float))


class TestMedianFilter3:
    def test_monotone_is_fixed_point(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert np.array_equal(median_filter3(x), x)

    def test_spike_removed(self):
        assert np.array_equal(median_filter3(np.array([3.0, 100.0, 3.0])), [3.0, 3.0, 3.0])

    def test_alternating_hand_evaluation(self):
        out = median_filter3(np.array([0.0, 10.0, 0.0, 10.0, 0.0]))
        assert np.array_equal(out, [0.0, 0.0, 10.0, 0.0, 0.0])

    def test_length_one_and_two(self):
        assert np.array_equal(median_filter3(np.array([7.0])), [7.0])
        assert np.array_equal(median_filter3(np.array([1.0, 9.0])), [1.0, 9.0])

    def test_output_values_are_order_statistics_of_input(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            x = rng.standard_normal(rng.integers(1, 30))
            out = median_filter3(x)
            assert out.shape == x.shape
            in_values = set(x.tolist())
            assert all(v in in_values for v in out.tolist())


class TestFilterTrial:
    def test_constant_columns_unchanged(self):
        trial = make_trial(np.ones((6, 3)) * [1.0, 2.0, 3.0])
        out = filter_trial(trial)
        assert np.array_equal(out.activations, trial.activations)
        assert out.id == trial.id and out.condition == trial.condition

    def test_matches_per_column_filter(self):
        rng = np.random.default_rng(0)
        trial = make_trial(rng.standard_normal((10, 4)))
        out = filter_trial(trial)
        for j in range(4):
            assert np.array_equal(out.activations[:, j], median_filter3(trial.activations[:, j]))

    def test_idempotent_on_monotone_columns(self):
        trial = make_trial(np.column_stack([np.arange(8.0), -np.arange(8.0)]))
        once = filter_trial(trial)
        twice = filter_trial(once)
        assert np.array_equal(once.activations, twice.activations)

    def test_shape_preserved(self):
        rng = np.random.default_rng(1)
        trial = make_trial(rng.standard_normal((9, 5)))
        assert filter_trial(trial).activations.shape == (9, 5)


class TestDropDegenerateUnits:
    def test_duplicate_column_dropped(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((20, 2))
        data = np.column_stack([base[:, 0], base[:, 1], base[:, 0]])
        trials = [make_trial(data)]
        reduced, report = drop_degenerate_units(trials)
        assert report.dropped_units == [2]
        assert report.q_effective == 2
        assert reduced[0].activations.shape == (20, 2)

    def test_constant_column_dropped(self):
        rng = np.random.default_rng(3)
        data = np.column_stack([rng.standard_normal(15), np.full(15, 4.2)])
        _, report = drop_degenerate_units([make_trial(data)])
        assert report.dropped_units == [1]
        assert report.q_effective == 1

    def test_full_rank_data_untouched(self):
        # independent noise columns: rank oracle says q, nothing may be dropped
        rng = np.random.default_rng(4)
        trials = [make_trial(rng.standard_normal((30, 5))) for _ in range(4)]
        reduced, report = drop_degenerate_units(trials)
        assert report.dropped_units == []
        assert report.q_effective == 5
        assert report.covariance_rank == 5
        pooled = np.vstack([t.activations for t in reduced])
        assert np.linalg.matrix_rank(np.cov(pooled, rowvar=False)) == 5

    def test_pooled_covariance_full_rank_after_drop(self):
        rng = np.random.default_rng(5)
        base = rng.standard_normal((40, 3))
        data = np.column_stack([base, base[:, 0], np.full(40, 1.0)])
        reduced, report = drop_degenerate_units([make_trial(data)])
        pooled = np.vstack([t.activations for t in reduced])
        cov = np.cov(pooled, rowvar=False)
        assert np.linalg.matrix_rank(cov) == report.q_effective == 3

    def test_scaled_copy_is_duplicate(self):
        # correlation 1 also catches affine copies with positive slope
        rng = np.random.default_rng(6)
        x = rng.standard_normal(25)
        data = np.column_stack([x, 3.0 * x + 1.0])
        _, report = drop_degenerate_units([make_trial(data)])
        assert report.dropped_units == [1]

    def test_all_units_dropped_raises(self):
        trials = [make_trial(np.ones((10, 2)))]
        with pytest.raises(ValueError, match="no usable units"):
            drop_degenerate_units(trials)

    def test_mismatched_q_raises(self):
        with pytest.raises(ValueError, match="share the unit count"):
            drop_degenerate_units([make_trial(np.zeros((5, 2))), make_trial(np.zeros((5, 3)))])
