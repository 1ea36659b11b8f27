#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
强组效应同质性检验与解析功效测试
"""

import math

import numpy as np
import pytest
from scipy import stats

from hetdecomp.errors import ConfigError, InvalidAlpha, SingularCovariance, ZeroVariance
from hetdecomp.model import Contrast
from hetdecomp.nuisance import LearnerSpec, assign_folds, fit_aggregates, fit_granular
from hetdecomp.decomp import decompose
from hetdecomp.oracle import enumerate_units, true_nuisances
from hetdecomp.simulate import PowerSimDgp
from hetdecomp.testing import (
    PowerSpec, analytic_power, check_alpha, delta1_test, gumbel_constants, strong_null_contrasts,
    strong_null_tests, supremum_test, wald_test, z_test,
)


class OffsettingDgp(PowerSimDgp):
    """ξ 正负交替：Σ e_ta ξ_t = 0"""

    @property
    def xi(self) -> np.ndarray:
        return np.asarray([self.c if j % 2 else -self.c for j in range(1, self.J + 1)])


# =============================================================================
# 临界值与检验
# =============================================================================


class TestGumbelConstants:

    def test_values_for_64(self):
        a_J, b_J = gumbel_constants(64)
        assert a_J == pytest.approx(2.19817, abs=1e-4)
        assert b_J == pytest.approx(1 / math.sqrt(2 * math.log(64)))

    def test_gumbel_quantile(self):
        assert stats.gumbel_r.ppf(0.95) == pytest.approx(2.9702, abs=1e-4)

    def test_requires_two_dimensions(self):
        with pytest.raises(ConfigError):
            gumbel_constants(1)


class TestWald:

    def test_identity_covariance(self):
        result = wald_test([1.0, 0.0], np.eye(2), alpha=0.05)
        assert result.statistic == pytest.approx(0.5)
        assert result.critical_value == pytest.approx(stats.chi2.ppf(0.95, 2) / 2)
        assert result.p_value == pytest.approx(math.exp(-0.5))
        assert not result.reject

    def test_rejects_large_difference(self):
        result = wald_test([3.0, 3.0], np.diag([0.5, 0.5]))
        assert result.reject
        assert result.p_value < 0.05

    def test_singular_covariance(self):
        with pytest.raises(SingularCovariance):
            wald_test([1.0, 1.0], np.ones((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            wald_test([1.0, 1.0, 1.0], np.eye(2))

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, float('nan')])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(InvalidAlpha):
            wald_test([1.0], np.eye(1), alpha=alpha)


class TestSupremum:

    def test_gumbel_critical_value(self):
        m = np.zeros(64)
        m[0] = 4.0
        result = supremum_test(m, np.ones(64), alpha=0.05)
        a_J, b_J = gumbel_constants(64)
        assert result.statistic == pytest.approx(4.0)
        assert result.critical_value == pytest.approx(a_J + b_J * stats.gumbel_r.ppf(0.95))
        assert result.reject

    def test_single_contrast_falls_back_to_normal(self):
        result = supremum_test([2.0], [1.0], alpha=0.05)
        assert result.critical_value == pytest.approx(1.959964, abs=1e-6)
        assert result.p_value == pytest.approx(2 * stats.norm.sf(2.0))
        assert result.reject

    def test_scales_must_be_positive(self):
        with pytest.raises(ConfigError):
            supremum_test([1.0, 2.0], [1.0, 0.0])


class TestZTest:

    def test_two_sided(self):
        result = z_test(-1.0, alpha=0.1)
        assert result.statistic == 1.0
        assert result.p_value == pytest.approx(2 * stats.norm.sf(1.0))
        assert not result.reject
        assert result.to_dict()['method'] == 'delta1'

    def test_check_alpha(self):
        assert check_alpha(0.05) == 0.05


# =============================================================================
# 强零假设对比
# =============================================================================


class TestStrongNullContrasts:

    def test_oracle_contrasts_equal_local_alternative(self):
        dgp = PowerSimDgp(J=2, c=0.4).to_discrete()
        dataset = enumerate_units(dgp, 8)
        nuisances = fit_aggregates(dataset, dgp.scheme, true_nuisances(dgp, dataset), dgp.contrast)
        contrasts = strong_null_contrasts(dgp.contrast, dataset, nuisances)
        assert contrasts.J == 2
        assert contrasts.reference_label == 0
        assert contrasts.names == ("u(1)-u(0)", "u(2)-u(0)")
        np.testing.assert_allclose(contrasts.estimates, [0.4, 0.4], atol=1e-12)

    def test_offsetting_heterogeneity_leaves_delta1_at_zero(self):
        dgp = OffsettingDgp(J=4, c=0.4).to_discrete()
        dataset = enumerate_units(dgp, 16)
        nuisances = fit_aggregates(dataset, dgp.scheme, true_nuisances(dgp, dataset), dgp.contrast)
        contrasts = strong_null_contrasts(dgp.contrast, dataset, nuisances)
        np.testing.assert_allclose(contrasts.estimates, [0.4, -0.4, 0.4, -0.4], atol=1e-12)
        report = decompose(dataset, dgp.contrast, nuisances)
        assert report.Delta("1")['estimate'] == pytest.approx(0.0, abs=1e-12)

    def test_reference_label_must_be_in_reference_arm(self):
        dgp = PowerSimDgp(J=2).to_discrete()
        dataset = enumerate_units(dgp, 8)
        nuisances = fit_aggregates(dataset, dgp.scheme, true_nuisances(dgp, dataset), dgp.contrast)
        with pytest.raises(ConfigError):
            strong_null_contrasts(dgp.contrast, dataset, nuisances, reference_label=1)

    def test_tests_on_sample(self, targeting, targeting_sample):
        folds = assign_folds(targeting_sample.n, 2, seed=6)
        learner = LearnerSpec('cell-frequency')
        nuisances = fit_aggregates(targeting_sample, targeting.scheme,
                                   fit_granular(targeting_sample, folds, learner, learner), targeting.contrast)
        report = decompose(targeting_sample, targeting.contrast, nuisances)
        results = strong_null_tests(targeting.contrast, targeting_sample, nuisances, report=report)
        assert set(results) == {'wald', 'supremum', 'delta1'}
        assert results['wald'].J == 2
        assert results['supremum'].J == 2
        for result in results.values():
            assert 0.0 <= result.p_value <= 1.0
        assert results['delta1'].statistic == pytest.approx(abs(report.Delta("1")['z']))

    def test_delta1_test_on_degenerate_report(self, targeting, targeting_sample):
        contrast = Contrast('treated', 'control', 0, 0)
        folds = assign_folds(targeting_sample.n, 2, seed=6)
        learner = LearnerSpec('cell-frequency')
        nuisances = fit_aggregates(targeting_sample, targeting.scheme,
                                   fit_granular(targeting_sample, folds, learner, learner), contrast)
        report = decompose(targeting_sample, contrast, nuisances)
        with pytest.raises(ZeroVariance):
            delta1_test(report)


# =============================================================================
# 解析功效
# =============================================================================


class TestAnalyticPower:

    @pytest.mark.parametrize("J", [2, 8, 64])
    def test_size_at_zero_alternative(self, J):
        powers = analytic_power(PowerSpec.dense(J, 0.0, alpha=0.05))
        for method in ('wald', 'supremum', 'delta1'):
            assert powers[method] == pytest.approx(0.05, abs=1e-10)

    def test_delta1_power_example(self):
        powers = analytic_power(PowerSpec.dense(50, 2.8))
        assert powers['delta1'] == pytest.approx(0.80, abs=0.005)

    def test_dense_alternative_favours_delta1(self):
        small, large = (analytic_power(PowerSpec.dense(J, 2.0)) for J in (2, 64))
        assert small['delta1'] == pytest.approx(large['delta1'])
        assert large['wald'] < small['wald']
        assert large['supremum'] < small['supremum']
        assert large['delta1'] > large['wald']

    @pytest.mark.parametrize("J", [5, 50, 500])
    def test_delta1_power_depends_only_on_weighted_sum(self, J):
        reference = analytic_power(PowerSpec.dense(5, 2.0))['delta1']
        assert analytic_power(PowerSpec.dense(J, 2.0))['delta1'] == pytest.approx(reference, abs=1e-12)
        active = J // 5
        sparse = PowerSpec(xi=(2.0 * J / active,) * active + (0.0,) * (J - active))
        assert analytic_power(sparse)['delta1'] == pytest.approx(reference, abs=1e-12)

    def test_offsetting_alternative_is_invisible_to_delta1(self):
        xi = tuple(4.0 if j % 2 == 0 else -4.0 for j in range(50))
        powers = analytic_power(PowerSpec(xi=xi))
        assert powers['delta1'] == pytest.approx(0.05, abs=1e-10)
        assert powers['wald'] > 0.3
        assert powers['supremum'] > 0.15

    def test_power_increases_with_signal(self):
        weak, strong = (analytic_power(PowerSpec.dense(16, value)) for value in (0.5, 3.0))
        for method in ('wald', 'supremum', 'delta1'):
            assert strong[method] > weak[method]

    def test_weights_length(self):
        with pytest.raises(ConfigError):
            PowerSpec(xi=(1.0, 2.0), e_ta=(1.0,))

    def test_default_weights_are_uniform(self):
        spec = PowerSpec(xi=(1.0, 0.0, 0.0, 0.0))
        assert spec.e_ta == (0.25,) * 4
        assert analytic_power(spec)['delta1'] == pytest.approx(
            stats.norm.sf(stats.norm.ppf(0.975) - 0.25) + stats.norm.cdf(stats.norm.ppf(0.025) - 0.25))
