#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
总体真值测试：精确有理数示例、恒等式，以及枚举样本上估计量与真值的一致性
"""

from fractions import Fraction

import numpy as np
import pytest

from hetdecomp.decomp import decompose
from hetdecomp.errors import ConfigError, ZeroProbabilityCell
from hetdecomp.model import AggregationScheme, ColumnGroups, Contrast
from hetdecomp.nuisance import fit_aggregates
from hetdecomp.oracle import (
    DiscreteDgp, decomposition_identities, enumerate_units, population_decomposition,
    population_regression_beta3, population_synthetic_means, random_dgp, true_nuisances,
)


def _oracle_report(dgp, units_per_mass):
    dataset = enumerate_units(dgp, units_per_mass)
    nuisances = fit_aggregates(dataset, dgp.scheme, true_nuisances(dgp, dataset), dgp.contrast)
    return decompose(dataset, dgp.contrast, nuisances)


# =============================================================================
# 精确示例
# =============================================================================


class TestTargetingExample:

    def test_exact_values(self, targeting):
        population = population_decomposition(targeting)
        assert population.Delta("2") == Fraction(-1, 3)
        for index in ("1", "3", "4", "4'", "5"):
            assert population.Delta(index) == 0
        assert population.dim == Fraction(-1, 3)
        assert population.adim == Fraction(-1, 3)
        assert population_regression_beta3(targeting) == Fraction(-1, 3)

    def test_identities_hold_exactly(self, targeting):
        assert decomposition_identities(population_decomposition(targeting)) == {'DiM': 0, 'ADiM': 0}

    def test_group_level_components(self, targeting):
        population = population_decomposition(targeting)
        assert population.delta("2", 1) == Fraction(-1, 6)
        assert population.delta("2", 0) == Fraction(1, 6)
        assert population.d("0", 'treated') == Fraction(3, 2)

    def test_stratified_mean(self, targeting):
        means = population_synthetic_means(targeting, 'treated', 1)
        assert means["3"] == Fraction(4, 3)
        assert means["0"] == Fraction(3, 2)


class TestCovarianceExample:

    def test_exact_values(self, covariance):
        population = population_decomposition(covariance)
        assert population.Delta("4") == Fraction(-1, 12)
        assert population.Delta("4'") == Fraction(-1, 12)
        for index in ("1", "2", "3", "5"):
            assert population.Delta(index) == 0
        assert population.dim == Fraction(-1, 12)
        assert decomposition_identities(population) == {'DiM': 0, 'ADiM': 0}


# =============================================================================
# 随机数据生成过程
# =============================================================================


class TestRandomDgps:

    @pytest.mark.parametrize("seed", range(6))
    def test_identities(self, seed):
        dgp = random_dgp(np.random.default_rng(seed))
        gaps = decomposition_identities(population_decomposition(dgp))
        assert abs(gaps['DiM']) < 1e-10
        assert abs(gaps['ADiM']) < 1e-10

    @pytest.mark.parametrize("seed", range(4))
    def test_randomized_design_has_no_selection_terms(self, seed):
        dgp = random_dgp(np.random.default_rng(100 + seed), randomized=True)
        population = population_decomposition(dgp)
        for index in ("4", "4'", "5"):
            assert abs(population.Delta(index)) < 1e-10
        assert population.dim == pytest.approx(population.adim, abs=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_dim_matches_regression(self, seed):
        dgp = random_dgp(np.random.default_rng(200 + seed), n_labels=4)
        assert population_regression_beta3(dgp) == pytest.approx(population_decomposition(dgp).dim, abs=1e-12)


# =============================================================================
# 枚举样本上的估计量
# =============================================================================


class TestEnumeratedEstimates:

    @pytest.mark.parametrize("name, units", [("targeting", 12), ("covariance", 48)])
    def test_estimates_equal_population(self, request, name, units):
        dgp = request.getfixturevalue(name)
        report = _oracle_report(dgp, units)
        population = population_decomposition(dgp)
        for parameter, value in population.values.items():
            assert report.estimate(parameter) == pytest.approx(float(value), abs=1e-9), parameter

    def test_decomposed_sums_match_direct_estimates(self, covariance):
        report = _oracle_report(covariance, 48)
        for estimand in ('DiM', 'ADiM'):
            check = report.identity[estimand]
            assert check['gap'] < 1e-9
            assert not check['flagged']

    def test_enumeration_size(self, targeting):
        dataset = enumerate_units(targeting, 24)
        assert dataset.n == 24
        assert int(np.sum(dataset.treatment == 2)) == 6

    def test_non_integer_counts(self, targeting):
        with pytest.raises(ConfigError):
            enumerate_units(targeting, 5)

    def test_point_outside_support(self, targeting, targeting_sample):
        dataset = targeting_sample.take(np.arange(10))
        shifted = dataset.__class__(outcome=dataset.outcome, treatment=dataset.treatment,
                                    covariates=dataset.covariates + 0.5, covariate_names=dataset.covariate_names)
        with pytest.raises(ConfigError):
            true_nuisances(targeting, shifted)


# =============================================================================
# 输入校验
# =============================================================================


class TestDgpValidation:

    def _scheme(self):
        return AggregationScheme(arms={'treated': (1,), 'control': (0,)}, groups=ColumnGroups('g'))

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            DiscreteDgp(points=((0.0,), (1.0,)), probabilities=(Fraction(1, 2), Fraction(1, 3)), labels=(0, 1),
                        propensities=((Fraction(1, 2),) * 2,) * 2, outcome_means=((0, 1),) * 2,
                        scheme=self._scheme(), covariate_names=("g",))

    def test_zero_probability_cell(self):
        dgp = DiscreteDgp(points=((0.0,), (1.0,)), probabilities=(Fraction(1, 2), Fraction(1, 2)), labels=(0, 1),
                          propensities=((Fraction(1, 2), Fraction(1, 2)), (1, 0)), outcome_means=((0, 1),) * 2,
                          scheme=self._scheme(), contrast=Contrast('treated', 'control', 1, 0),
                          covariate_names=("g",))
        with pytest.raises(ZeroProbabilityCell):
            population_decomposition(dgp)

    def test_contrast_required(self):
        dgp = DiscreteDgp(points=((0.0,), (1.0,)), probabilities=(Fraction(1, 2), Fraction(1, 2)), labels=(0, 1),
                          propensities=((Fraction(1, 2),) * 2,) * 2, outcome_means=((0, 1),) * 2,
                          scheme=self._scheme(), covariate_names=("g",))
        with pytest.raises(ConfigError):
            population_decomposition(dgp)
