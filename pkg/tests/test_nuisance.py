#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
冗余参数测试：分折、交叉拟合、截断与聚合冗余参数
"""

import numpy as np
import pytest

from hetdecomp.errors import ConfigError, EmptyCell, InvalidK, LabelAbsentInFold, LearnerFailure
from hetdecomp.model import Dataset
from hetdecomp.moments import AggregateKey
from hetdecomp.nuisance import (
    LearnerSpec, NuisanceEstimates, assign_folds, clip_propensities, default_clip_floor, fit_aggregates,
    fit_granular,
)
from hetdecomp.oracle import enumerate_units, true_nuisances


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def constant_covariate_dataset():
    rng = np.random.default_rng(5)
    treatment = rng.integers(0, 3, size=60)
    treatment[:3] = [0, 1, 2]
    return Dataset(outcome=rng.normal(size=60), treatment=treatment, covariates=np.zeros((60, 1)))


# =============================================================================
# 分折
# =============================================================================


class TestFolds:

    def test_balanced_sizes(self):
        folds = assign_folds(103, 5, seed=1)
        sizes = folds.sizes()
        assert sum(sizes) == 103
        assert max(sizes) - min(sizes) <= 1

    def test_reproducible(self):
        first = assign_folds(50, 3, seed=9)
        second = assign_folds(50, 3, seed=9)
        np.testing.assert_array_equal(first.fold_of, second.fold_of)
        assert not np.array_equal(first.fold_of, assign_folds(50, 3, seed=10).fold_of)

    def test_split_partitions_rows(self):
        folds = assign_folds(20, 4, seed=0)
        train, test = folds.split(2)
        assert set(train).isdisjoint(test)
        assert len(train) + len(test) == 20

    @pytest.mark.parametrize("n, K", [(10, 1), (3, 4)])
    def test_invalid_k(self, n, K):
        with pytest.raises(InvalidK):
            assign_folds(n, K, seed=0)


# =============================================================================
# 学习器描述
# =============================================================================


class TestLearnerSpec:

    def test_from_dict_splits_hyperparameters(self):
        spec = LearnerSpec.from_dict({'kind': 'regularized-multinomial', 'C': 0.5})
        assert spec.kind == 'regularized-multinomial'
        assert spec.hyperparameters == {'C': 0.5}
        assert spec.to_dict() == {'kind': 'regularized-multinomial', 'C': 0.5}

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            LearnerSpec('random-forest')

    def test_user_supplied_needs_callbacks(self):
        with pytest.raises(ConfigError):
            LearnerSpec('user-supplied')


# =============================================================================
# 交叉拟合
# =============================================================================


class TestFitGranular:

    def test_predictions_come_from_other_folds(self, constant_covariate_dataset):
        dataset = constant_covariate_dataset
        folds = assign_folds(dataset.n, 3, seed=4)
        nuisances = fit_granular(dataset, folds, LearnerSpec('cell-frequency'), LearnerSpec('cell-frequency'),
                                 clip_floor=1e-6)
        codes = dataset.treatment_codes()
        for k in range(1, 4):
            train, test = folds.split(k)
            expected = np.bincount(codes[train], minlength=3) / train.size
            np.testing.assert_allclose(nuisances.e_hat[test], np.tile(expected, (test.size, 1)))
            expected_mu = dataset.outcome[train][codes[train] == 1].mean()
            np.testing.assert_allclose(nuisances.mu(1)[test], expected_mu)

    def test_propensity_rows_are_probabilities(self, targeting_sample):
        folds = assign_folds(targeting_sample.n, 3, seed=2)
        nuisances = fit_granular(targeting_sample, folds, LearnerSpec('regularized-multinomial'),
                                 LearnerSpec('per-treatment-ridge'))
        np.testing.assert_allclose(nuisances.e_hat.sum(axis=1), 1.0)
        assert nuisances.e_hat.min() >= nuisances.clip_floor * 0.5
        assert nuisances.performance_stats['propensity_learner'] == 'regularized-multinomial'

    def test_parametric_learners_recover_truth(self):
        rng = np.random.default_rng(17)
        n = 6000
        X = rng.normal(size=(n, 2))
        logits = np.column_stack([np.zeros(n), 0.8 * X[:, 0], -0.5 * X[:, 1]])
        e_true = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        treatment = np.asarray([rng.choice(3, p=row) for row in e_true])
        mu_true = np.column_stack([t + (1.0 + t) * X[:, 0] - 0.5 * X[:, 1] for t in range(3)])
        outcome = mu_true[np.arange(n), treatment] + rng.normal(size=n)
        dataset = Dataset(outcome=outcome, treatment=treatment, covariates=X)

        folds = assign_folds(n, 3, seed=1)
        nuisances = fit_granular(dataset, folds, LearnerSpec('regularized-multinomial'),
                                 LearnerSpec('per-treatment-ridge'))
        assert np.abs(nuisances.e_hat - e_true).mean() < 0.03
        assert np.abs(nuisances.mu_hat - mu_true).mean() < 0.1

    def test_thread_count_does_not_change_estimates(self, targeting_sample):
        folds = assign_folds(targeting_sample.n, 4, seed=3)
        learner = LearnerSpec('k-nearest-neighbor', {'n_neighbors': 25})
        serial = fit_granular(targeting_sample, folds, learner, learner, max_workers=1)
        threaded = fit_granular(targeting_sample, folds, learner, learner, max_workers=4)
        np.testing.assert_array_equal(serial.e_hat, threaded.e_hat)
        np.testing.assert_array_equal(serial.mu_hat, threaded.mu_hat)

    def test_label_absent_in_fold(self):
        treatment = np.array([0, 1] * 5)
        treatment[0] = 2
        dataset = Dataset(outcome=np.arange(10.0), treatment=treatment, covariates=np.zeros((10, 1)))
        folds = assign_folds(10, 2, seed=0)
        with pytest.raises(LabelAbsentInFold):
            fit_granular(dataset, folds, LearnerSpec('cell-frequency'), LearnerSpec('cell-frequency'))

    def test_user_supplied_learner(self, targeting_sample):
        def fit(X, target, seed):
            return int(target.max()) + 1

        def predict(model, X):
            return np.full((X.shape[0], model), 1.0 / model)

        spec = LearnerSpec('user-supplied', fit=fit, predict=predict)
        folds = assign_folds(targeting_sample.n, 2, seed=0)
        nuisances = fit_granular(targeting_sample, folds, spec, LearnerSpec('cell-frequency'))
        np.testing.assert_allclose(nuisances.e_hat, 1.0 / 3.0)

    def test_bad_user_propensities(self, targeting_sample):
        spec = LearnerSpec('user-supplied', fit=lambda X, target, seed: None,
                           predict=lambda model, X: np.full((X.shape[0], 3), 0.5))
        folds = assign_folds(targeting_sample.n, 2, seed=0)
        with pytest.raises(LearnerFailure):
            fit_granular(targeting_sample, folds, spec, LearnerSpec('cell-frequency'))


class TestClipping:

    def test_clip_and_renormalize(self):
        e_hat = np.array([[0.0, 0.5, 0.5], [0.2, 0.3, 0.5]])
        clipped, count, adjustment = clip_propensities(e_hat, 0.01)
        np.testing.assert_allclose(clipped.sum(axis=1), 1.0)
        assert count == 1
        assert clipped.min() > 0.0
        assert adjustment == pytest.approx(1.0)
        np.testing.assert_allclose(clipped[1], e_hat[1])
        np.testing.assert_allclose(clipped[0], [0.01, 0.495, 0.495])

    def test_several_entries_clipped_in_one_row(self):
        e_hat = np.array([[1e-6, 1e-6, 1e-6, 0.999997],
                          [0.0, 0.0, 0.4, 0.6]])
        clipped, count, _ = clip_propensities(e_hat, 0.1)
        assert count == 5
        np.testing.assert_allclose(clipped.sum(axis=1), 1.0)
        assert np.abs(clipped - e_hat).max() <= 0.1 + 1e-12
        assert clipped.min() > 0.0
        np.testing.assert_allclose(clipped[0, :3], 1e-6 + (0.1 / 3.0), rtol=1e-6)
        np.testing.assert_allclose(clipped[1], [0.1, 0.1, 0.3, 0.5])

    def test_change_bounded_by_floor(self):
        rng = np.random.default_rng(11)
        e_hat = rng.dirichlet(np.full(6, 0.2), size=500)
        floor = 0.02
        clipped, _, _ = clip_propensities(e_hat, floor)
        np.testing.assert_allclose(clipped.sum(axis=1), 1.0)
        assert np.abs(clipped - e_hat).max() <= floor + 1e-12
        assert clipped.min() > 0.0

    def test_default_floor(self):
        assert default_clip_floor(100) == pytest.approx(0.005)
        assert default_clip_floor(10 ** 6) == pytest.approx(1e-4)


# =============================================================================
# 聚合冗余参数
# =============================================================================


class TestAggregates:

    def test_oracle_aggregates_match_population(self, targeting):
        dataset = enumerate_units(targeting, 12)
        nuisances = fit_aggregates(dataset, targeting.scheme, true_nuisances(targeting, dataset), targeting.contrast)
        assert nuisances.complete
        assert nuisances.aggregate('e_a', arm='treated') == pytest.approx(0.5)
        assert nuisances.aggregate('e_ta_g', t=1, arm='treated', group=1) == pytest.approx(2 / 3)
        assert nuisances.aggregate('e_ta_g', t=1, arm='treated', group=0) == pytest.approx(1 / 3)
        assert nuisances.aggregate('mu_t_g', t=2, group=0) == pytest.approx(2.0)
        assert nuisances.aggregate('m_a_g', arm='treated', group=1) == pytest.approx(4 / 3)

    def test_missing_aggregate_raises_empty_cell(self, targeting):
        dataset = enumerate_units(targeting, 12)
        granular = true_nuisances(targeting, dataset)
        with pytest.raises(EmptyCell):
            granular.aggregate(AggregateKey.make('e_a', arm='treated'))

    def test_strict_with_contrast(self, targeting):
        dataset = enumerate_units(targeting, 12)
        keep = ~((dataset.treatment > 0) & (dataset.covariate('g') == 1))
        subset = dataset.take(np.flatnonzero(keep))
        granular = true_nuisances(targeting, subset)
        with pytest.raises(EmptyCell):
            fit_aggregates(subset, targeting.scheme, granular, targeting.contrast)
        lenient = fit_aggregates(subset, targeting.scheme, granular)
        assert lenient.aggregate('e_ag', arm='treated', group=1) == 0.0
        assert AggregateKey.make('m_a_g', arm='treated', group=1) not in lenient.aggregates
        assert AggregateKey.make('m_a_g', arm='treated', group=0) in lenient.aggregates

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            NuisanceEstimates(labels=(0, 1), e_hat=np.full((3, 3), 1 / 3), mu_hat=np.zeros((3, 2)))
