#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据模型测试：标签、聚合方案、校验与连续剂量分箱
"""

import numpy as np
import pandas as pd
import pytest

from hetdecomp.errors import (
    ConfigError, EmptyArm, EmptyGroup, MissingValue, OutOfRangeDose, UnknownColumn, UnknownTreatmentLabel,
)
from hetdecomp.model import (
    AggregationScheme, CellTable, ColumnGroups, Contrast, DataBindings, Dataset, PartitionScheme,
    ThresholdGroups, atom_label, bin_label, dataset_from_frame, discretize, load_dataset, normalize_label,
    sorted_labels, validate,
)


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def small_dataset():
    return Dataset(
        outcome=[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        treatment=[0, 1, 2, 0, 1, 2],
        covariates=np.array([[0.1, 0], [0.4, 0], [0.9, 0], [0.2, 1], [0.7, 1], [0.8, 1]]),
        covariate_names=("x1", "g"),
    )


@pytest.fixture
def scheme():
    return AggregationScheme(arms={'treated': (1, 2), 'control': (0,)}, groups=ColumnGroups('g'))


# =============================================================================
# 标签与数据集
# =============================================================================


class TestLabels:

    def test_integer_valued_float_becomes_int(self):
        assert normalize_label(2.0) == 2
        assert isinstance(normalize_label(np.float64(2.0)), int)
        assert normalize_label(0.5) == 0.5
        assert normalize_label("a") == "a"

    def test_sorted_labels_numbers_before_strings(self):
        assert sorted_labels(["b", 2, 1.0, "a", 2]) == (1, 2, "a", "b")


class TestDataset:

    def test_arrays_are_read_only(self, small_dataset):
        with pytest.raises(ValueError):
            small_dataset.outcome[0] = 10.0

    def test_labels_and_codes(self, small_dataset):
        assert small_dataset.labels == (0, 1, 2)
        np.testing.assert_array_equal(small_dataset.treatment_codes(), [0, 1, 2, 0, 1, 2])

    def test_codes_with_undeclared_label(self, small_dataset):
        with pytest.raises(UnknownTreatmentLabel):
            small_dataset.treatment_codes((0, 1))

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            Dataset(outcome=[1.0, 2.0], treatment=[0], covariates=np.zeros((2, 1)))

    def test_unknown_covariate(self, small_dataset):
        with pytest.raises(UnknownColumn):
            small_dataset.covariate("x9")

    def test_take_keeps_names(self, small_dataset):
        subset = small_dataset.take(np.array([0, 3]))
        assert subset.n == 2
        assert subset.covariate_names == ("x1", "g")
        np.testing.assert_array_equal(subset.outcome, [1.0, 4.0])

    def test_continuous_dataset_has_no_labels(self):
        dataset = Dataset(outcome=[0.0, 1.0], treatment=[0.2, 0.7], covariates=np.zeros((2, 1)), continuous=True)
        with pytest.raises(ConfigError):
            dataset.labels


# =============================================================================
# 聚合方案与分组
# =============================================================================


class TestAggregationScheme:

    def test_arms_must_be_disjoint(self):
        with pytest.raises(ConfigError):
            AggregationScheme(arms={'a': (1, 2), 'b': (2, 3)}, groups=ColumnGroups('g'))

    def test_empty_arm_definition(self):
        with pytest.raises(ConfigError):
            AggregationScheme(arms={'a': ()}, groups=ColumnGroups('g'))

    def test_indicators(self, small_dataset, scheme):
        np.testing.assert_array_equal(scheme.arm_indicator(small_dataset, 'treated'),
                                      [False, True, True, False, True, True])
        np.testing.assert_array_equal(scheme.group_indicator(small_dataset, 1),
                                      [False, False, False, True, True, True])
        assert scheme.arm_of(2) == 'treated'
        assert scheme.arm_of(7) is None

    def test_threshold_groups(self, small_dataset):
        rule = ThresholdGroups(covariate='x1', cutoff=0.5)
        assert list(rule.assign(small_dataset)) == ['low', 'low', 'high', 'low', 'high', 'high']
        assert rule.group_labels(small_dataset) == ('high', 'low')

    def test_contrast_normalizes_groups(self):
        contrast = Contrast('treated', 'control', 1.0, np.int64(0))
        assert contrast.groups == (1, 0)
        assert isinstance(contrast.group, int)


class TestValidate:

    def test_cell_counts(self, small_dataset, scheme):
        report = validate(small_dataset, scheme)
        assert report.cell_table.count(1, 'treated', 0) == 1
        assert report.cell_table.arm_total('treated') == 4
        assert report.arm_shares['control'] == pytest.approx(2 / 6)
        assert report.ok

    def test_empty_cell_is_reported_not_raised(self, scheme):
        dataset = Dataset(outcome=np.arange(4.0), treatment=[0, 1, 0, 2],
                          covariates=np.array([[0.0], [0.0], [1.0], [1.0]]), covariate_names=("g",))
        report = validate(dataset, scheme, contrast=Contrast('treated', 'control', 1, 0))
        assert (2, 0) in report.empty_cells
        assert (1, 1) in report.empty_cells
        assert not report.ok

    def test_empty_arm(self, small_dataset):
        scheme = AggregationScheme(arms={'treated': (5,), 'control': (0,)}, groups=ColumnGroups('g'))
        with pytest.raises(EmptyArm):
            validate(small_dataset, scheme)

    def test_arm_label_absent_from_data(self, small_dataset):
        scheme = AggregationScheme(arms={'treated': (1, 2, 3), 'control': (0,)}, groups=ColumnGroups('g'))
        with pytest.raises(UnknownTreatmentLabel):
            validate(small_dataset, scheme)

    def test_empty_group(self, small_dataset, scheme):
        with pytest.raises(EmptyGroup):
            validate(small_dataset, scheme, contrast=Contrast('treated', 'control', 2, 0))

    def test_missing_outcome(self, scheme):
        dataset = Dataset(outcome=[1.0, np.nan], treatment=[0, 1], covariates=np.zeros((2, 1)),
                          covariate_names=("g",))
        with pytest.raises(MissingValue):
            validate(dataset, scheme)

    def test_low_share_warning(self, small_dataset, scheme):
        report = validate(small_dataset, scheme, min_share=0.5)
        assert "arm=control" in report.low_shares

    def test_cell_table_frame(self, small_dataset, scheme):
        frame = CellTable.build(small_dataset, scheme).to_frame()
        assert frame['count'].sum() == small_dataset.n


# =============================================================================
# 连续剂量分箱
# =============================================================================


class TestPartitionScheme:

    def test_assign_bins_and_atoms(self):
        partition = PartitionScheme.equal_width(0.0, 1.0, 4, atoms=(0.0,))
        labels = partition.assign(np.array([0.0, 0.1, 0.25, 0.99, 1.0]))
        assert list(labels) == [atom_label(0.0), bin_label(0), bin_label(1), bin_label(3), bin_label(3)]
        assert partition.labels[0] == "atom_0"
        assert partition.J == 4

    def test_out_of_range_dose(self):
        partition = PartitionScheme.equal_width(0.0, 1.0, 2)
        with pytest.raises(OutOfRangeDose):
            partition.assign(np.array([0.5, 1.5]))

    def test_edges_must_increase(self):
        with pytest.raises(ConfigError):
            PartitionScheme((0.0, 0.5, 0.5, 1.0))

    def test_equal_mass_excludes_atoms(self):
        doses = np.concatenate([np.zeros(50), np.linspace(0.01, 1.0, 100)])
        partition = PartitionScheme.equal_mass(doses, 4, atoms=(0.0,))
        counts = pd.Series(partition.assign(doses)).value_counts()
        assert counts[atom_label(0.0)] == 50
        assert all(counts[bin_label(j)] == 25 for j in range(4))

    def test_discretize(self):
        dataset = Dataset(outcome=[1.0, 2.0, 3.0], treatment=[0.1, 0.6, 0.0], covariates=np.zeros((3, 1)),
                          continuous=True)
        partition = PartitionScheme.equal_width(0.0, 1.0, 2, atoms=(0.0,))
        discrete = discretize(dataset, partition)
        assert not discrete.continuous
        assert list(discrete.treatment) == [bin_label(0), bin_label(1), atom_label(0.0)]
        assert discretize(discrete, partition) is discrete

    def test_discretize_maps_declared_atoms(self):
        partition = PartitionScheme.equal_width(0.0, 1.0, 2, atoms=(0.0, 1.0))
        dataset = Dataset(outcome=[1.0, 2.0, 3.0, 4.0], treatment=[0, bin_label(0), 1.0, bin_label(1)],
                          covariates=np.zeros((4, 1)))
        discrete = discretize(dataset, partition)
        assert list(discrete.treatment) == [atom_label(0.0), bin_label(0), atom_label(1.0), bin_label(1)]
        assert discretize(discrete, partition) is discrete

    def test_discretize_rejects_undeclared_labels(self):
        partition = PartitionScheme.equal_width(0.0, 1.0, 2, atoms=(0.0,))
        dataset = Dataset(outcome=[1.0, 2.0], treatment=[0, 7], covariates=np.zeros((2, 1)))
        with pytest.raises(ConfigError):
            discretize(dataset, partition)


# =============================================================================
# 数据读取
# =============================================================================


class TestLoading:

    def test_group_column_is_appended_to_covariates(self):
        frame = pd.DataFrame({'y': [1.0, 2.0], 't': [0, 1], 'x': [0.3, 0.4], 'g': [1, 0]})
        dataset = dataset_from_frame(frame, DataBindings(covariates=('x',), group='g'))
        assert dataset.covariate_names == ('x', 'g')

    def test_string_groups_are_encoded(self):
        frame = pd.DataFrame({'y': [1.0, 2.0, 3.0], 't': [0, 1, 1], 'g': ['south', 'north', 'south']})
        dataset = dataset_from_frame(frame, DataBindings(group='g'))
        np.testing.assert_array_equal(dataset.covariate('g'), [1.0, 0.0, 1.0])

    def test_unknown_column(self):
        frame = pd.DataFrame({'y': [1.0], 't': [0]})
        with pytest.raises(UnknownColumn):
            dataset_from_frame(frame, DataBindings(covariates=('x',)))

    def test_missing_values(self):
        frame = pd.DataFrame({'y': [1.0, None], 't': [0, 1], 'g': [0, 1]})
        with pytest.raises(MissingValue):
            dataset_from_frame(frame, DataBindings(group='g'))

    def test_load_csv(self, tmp_path):
        path = tmp_path / "data.csv"
        pd.DataFrame({'y': [1.0, 2.0], 't': ['a', 'b'], 'g': [0, 1]}).to_csv(path, index=False)
        dataset = load_dataset(str(path), DataBindings(group='g'))
        assert dataset.labels == ('a', 'b')

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_dataset(str(tmp_path / "absent.csv"), DataBindings())
