#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据模型模块
定义数据集、处理聚合方案、异质性分组、单元计数表和连续处理的分箱方案，
提供数据读取、校验和离散化功能
"""

import logging
import math
import numbers
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    ConfigError, EmptyArm, EmptyGroup, MissingValue, OutOfRangeDose,
    UnknownColumn, UnknownTreatmentLabel,
)

logger = logging.getLogger(__name__)

Label = Union[int, str, float]


def normalize_label(value: Any) -> Label:
    """统一标签表示：numpy标量转Python标量，整数值浮点转int"""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        if math.isfinite(value) and float(value).is_integer():
            return int(value)
        return float(value)
    return value


def _label_key(label: Label):
    # 数值在前，字符串在后
    if isinstance(label, numbers.Number):
        return (0, label, "")
    return (1, 0, str(label))


def sorted_labels(values: Iterable[Any]) -> Tuple[Label, ...]:
    return tuple(sorted({normalize_label(v) for v in values}, key=_label_key))


def _label_array(values: Sequence[Any]) -> np.ndarray:
    labels = [normalize_label(v) for v in values]
    if all(isinstance(v, int) for v in labels):
        return np.asarray(labels, dtype=np.int64)
    return np.asarray(labels, dtype=object)


def label_equals(values: np.ndarray, label: Any) -> np.ndarray:
    """逐元素比较标签；整数数组与非整数标签直接判为不等"""
    label = normalize_label(label)
    if values.dtype != object and not isinstance(label, int):
        return np.zeros(values.shape[0], dtype=bool)
    return np.asarray(values == label, dtype=bool)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    单位记录数据集

    Attributes:
        outcome: 结果变量 Y，形状 (n,)
        treatment: 有效处理标签 T（分类）或连续剂量，形状 (n,)
        covariates: 协变量矩阵 X，形状 (n, d)
        covariate_names: 协变量列名
        continuous: 处理变量是否为连续剂量
    """
    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    covariate_names: Tuple[str, ...] = ()
    continuous: bool = False

    def __post_init__(self):
        outcome = np.asarray(self.outcome, dtype=float).reshape(-1)
        if self.continuous:
            treatment = np.asarray(self.treatment, dtype=float).reshape(-1)
        else:
            treatment = _label_array(np.asarray(self.treatment, dtype=object).reshape(-1))
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        n = outcome.shape[0]
        if n < 1:
            raise ConfigError("数据集至少需要一个样本")
        if treatment.shape[0] != n or covariates.shape[0] != n:
            raise ConfigError(
                f"结果、处理和协变量长度不一致: {n}, {treatment.shape[0]}, {covariates.shape[0]}"
            )
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(covariates.shape[1]))
        if len(names) != covariates.shape[1]:
            raise ConfigError(f"协变量名数量 {len(names)} 与列数 {covariates.shape[1]} 不一致")
        object.__setattr__(self, 'outcome', _frozen(outcome))
        object.__setattr__(self, 'treatment', _frozen(treatment))
        object.__setattr__(self, 'covariates', _frozen(covariates))
        object.__setattr__(self, 'covariate_names', names)

    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def labels(self) -> Tuple[Label, ...]:
        """处理标签字母表 𝒯（排序后）"""
        if self.continuous:
            raise ConfigError("连续剂量数据集没有离散标签，请先调用 discretize")
        return sorted_labels(self.treatment)

    def treatment_codes(self, labels: Optional[Sequence[Label]] = None) -> np.ndarray:
        """处理标签在字母表中的整数编码"""
        labels = tuple(labels) if labels is not None else self.labels
        index = {label: k for k, label in enumerate(labels)}
        try:
            return np.fromiter((index[normalize_label(v)] for v in self.treatment),
                               dtype=np.int64, count=self.n)
        except KeyError as exc:
            raise UnknownTreatmentLabel(f"数据中出现未声明的处理标签 {exc.args[0]!r}",
                                        label=exc.args[0]) from None

    def is_treatment(self, label: Label) -> np.ndarray:
        return label_equals(self.treatment, label)

    def covariate(self, name: Union[str, int]) -> np.ndarray:
        if isinstance(name, int):
            return self.covariates[:, name]
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise UnknownColumn(f"协变量 '{name}' 不存在", label=name) from None

    def with_outcome(self, outcome: np.ndarray) -> 'Dataset':
        return replace(self, outcome=outcome)

    def take(self, indices: np.ndarray) -> 'Dataset':
        return replace(self,
                       outcome=self.outcome[indices],
                       treatment=self.treatment[indices],
                       covariates=self.covariates[indices])

    def to_frame(self, outcome: str = "y", treatment: str = "t") -> pd.DataFrame:
        frame = pd.DataFrame(self.covariates, columns=list(self.covariate_names))
        frame.insert(0, treatment, self.treatment)
        frame.insert(0, outcome, self.outcome)
        return frame


# ==========================================
# 异质性分组规则
# ==========================================

@dataclass(frozen=True)
class ColumnGroups:
    """以显式分组列（作为协变量保存）定义 g(·)"""
    column: Union[str, int]

    def assign(self, dataset: Dataset) -> np.ndarray:
        return _label_array(dataset.covariate(self.column))

    def group_labels(self, dataset: Dataset) -> Tuple[Label, ...]:
        return sorted_labels(self.assign(dataset))


@dataclass(frozen=True)
class ThresholdGroups:
    """以单个协变量阈值定义 g(·)：x >= cutoff 为 above，否则为 below"""
    covariate: Union[str, int]
    cutoff: float
    above: Label = "high"
    below: Label = "low"

    def assign(self, dataset: Dataset) -> np.ndarray:
        values = dataset.covariate(self.covariate)
        out = np.where(values >= self.cutoff, 1, 0)
        return _label_array([self.above if v else self.below for v in out])

    def group_labels(self, dataset: Dataset) -> Tuple[Label, ...]:
        return sorted_labels([self.above, self.below])


GroupRule = Union[ColumnGroups, ThresholdGroups]


@dataclass(frozen=True)
class AggregationScheme:
    """
    处理聚合 a(·) 与协变量分组 g(·)

    Args:
        arms: 处理组标识 -> 该组包含的有效处理标签（互斥）
        groups: 分组规则
    """
    arms: Mapping[str, Tuple[Label, ...]]
    groups: GroupRule

    def __post_init__(self):
        arms = {str(arm): tuple(normalize_label(t) for t in labels) for arm, labels in self.arms.items()}
        owner: Dict[Label, str] = {}
        for arm, labels in arms.items():
            if not labels:
                raise ConfigError(f"处理组 '{arm}' 未包含任何处理标签", label=arm)
            for label in labels:
                if label in owner and owner[label] != arm:
                    raise ConfigError(
                        f"处理标签 {label!r} 同时属于 '{owner[label]}' 和 '{arm}'，处理组必须互斥",
                        label=label,
                    )
                owner[label] = arm
        object.__setattr__(self, 'arms', arms)

    def arm_labels(self, arm: str) -> Tuple[Label, ...]:
        try:
            return self.arms[str(arm)]
        except KeyError:
            raise ConfigError(f"未定义的处理组 '{arm}'", label=arm) from None

    def arm_of(self, label: Label) -> Optional[str]:
        label = normalize_label(label)
        for arm, labels in self.arms.items():
            if label in labels:
                return arm
        return None

    def arm_indicator(self, dataset: Dataset, arm: str) -> np.ndarray:
        mask = np.zeros(dataset.n, dtype=bool)
        for label in self.arm_labels(arm):
            mask |= label_equals(dataset.treatment, label)
        return mask

    def group_of(self, dataset: Dataset) -> np.ndarray:
        return self.groups.assign(dataset)

    def group_indicator(self, dataset: Dataset, group: Label) -> np.ndarray:
        return label_equals(self.group_of(dataset), group)


@dataclass(frozen=True)
class Contrast:
    """一次分解所比较的 (a, a′, g, g′)"""
    arm: str
    reference_arm: str
    group: Label
    reference_group: Label

    def __post_init__(self):
        object.__setattr__(self, 'arm', str(self.arm))
        object.__setattr__(self, 'reference_arm', str(self.reference_arm))
        object.__setattr__(self, 'group', normalize_label(self.group))
        object.__setattr__(self, 'reference_group', normalize_label(self.reference_group))

    @property
    def arms(self) -> Tuple[str, str]:
        return (self.arm, self.reference_arm)

    @property
    def groups(self) -> Tuple[Label, Label]:
        return (self.group, self.reference_group)


# ==========================================
# 单元计数与校验
# ==========================================

@dataclass(frozen=True)
class CellTable:
    """(t, arm, group) 单元计数表"""
    counts: Mapping[Tuple[Label, str, Label], int]
    n: int

    @classmethod
    def build(cls, dataset: Dataset, scheme: AggregationScheme) -> 'CellTable':
        frame = pd.DataFrame({
            't': list(dataset.treatment),
            'group': list(scheme.group_of(dataset)),
        })
        frame['arm'] = frame['t'].map(scheme.arm_of)
        tally = frame.dropna(subset=['arm']).groupby(['t', 'arm', 'group'], sort=True).size()
        counts = {(normalize_label(t), str(a), normalize_label(g)): int(c) for (t, a, g), c in tally.items()}
        # 未被任何处理组引用的标签单独计入 arm=None
        unassigned = frame[frame['arm'].isna()].groupby(['t', 'group'], sort=True).size()
        for (t, g), c in unassigned.items():
            counts[(normalize_label(t), None, normalize_label(g))] = int(c)
        return cls(counts=counts, n=dataset.n)

    def count(self, t: Label, arm: str, group: Label) -> int:
        return self.counts.get((normalize_label(t), arm, normalize_label(group)), 0)

    def arm_total(self, arm: str) -> int:
        return sum(c for (_, a, _), c in self.counts.items() if a == arm)

    def group_total(self, group: Label) -> int:
        group = normalize_label(group)
        return sum(c for (_, _, g), c in self.counts.items() if g == group)

    def arm_group_total(self, arm: str, group: Label) -> int:
        group = normalize_label(group)
        return sum(c for (_, a, g), c in self.counts.items() if a == arm and g == group)

    def to_frame(self) -> pd.DataFrame:
        rows = [{'t': t, 'arm': a, 'group': g, 'count': c} for (t, a, g), c in self.counts.items()]
        return pd.DataFrame(rows, columns=['t', 'arm', 'group', 'count'])


@dataclass
class ValidationReport:
    """校验报告：计数表、占比和警告"""
    cell_table: CellTable
    arm_shares: Dict[str, float] = field(default_factory=dict)
    group_shares: Dict[Label, float] = field(default_factory=dict)
    empty_cells: List[Tuple[Label, Label]] = field(default_factory=list)
    low_shares: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings


def _check_missing(dataset: Dataset):
    if np.isnan(dataset.outcome).any():
        raise MissingValue("结果变量存在缺失值", label="outcome")
    bad = np.isnan(dataset.covariates).any(axis=0)
    if bad.any():
        name = dataset.covariate_names[int(np.argmax(bad))]
        raise MissingValue(f"协变量 '{name}' 存在缺失值", label=name)
    if dataset.continuous:
        if np.isnan(dataset.treatment).any():
            raise MissingValue("处理剂量存在缺失值", label="treatment")
    elif dataset.treatment.dtype == object and any(
            v is None or (isinstance(v, float) and math.isnan(v)) for v in dataset.treatment):
        raise MissingValue("处理标签存在缺失值", label="treatment")


def validate(dataset: Dataset, scheme: AggregationScheme, min_share: float = 0.01,
             contrast: Optional[Contrast] = None) -> ValidationReport:
    """
    校验数据集与聚合方案，返回单元计数和诊断

    Args:
        dataset: 数据集（不会被修改）
        scheme: 聚合方案
        min_share: 处理组/分组占比下限（诊断用）
        contrast: 若给出，其引用的处理组和分组必须非空

    Returns:
        ValidationReport
    """
    _check_missing(dataset)
    present = set(dataset.labels)
    for arm, labels in scheme.arms.items():
        if not any(label in present for label in labels):
            raise EmptyArm(f"处理组 '{arm}' 没有任何样本", label=arm)
        for label in labels:
            if label not in present:
                raise UnknownTreatmentLabel(f"处理组 '{arm}' 引用的处理标签 {label!r} 未出现在数据中",
                                            label=label)

    table = CellTable.build(dataset, scheme)
    report = ValidationReport(cell_table=table)
    groups = scheme.groups.group_labels(dataset)
    for arm in scheme.arms:
        report.arm_shares[arm] = table.arm_total(arm) / dataset.n
    for group in groups:
        report.group_shares[group] = table.group_total(group) / dataset.n

    if contrast is not None:
        for arm in contrast.arms:
            scheme.arm_labels(arm)
        for group in contrast.groups:
            if report.group_shares.get(group, 0.0) == 0.0:
                raise EmptyGroup(f"分组 {group!r} 没有任何样本", label=group)

    referenced_arms = contrast.arms if contrast is not None else tuple(scheme.arms)
    referenced_groups = contrast.groups if contrast is not None else groups
    for arm in referenced_arms:
        for t in scheme.arm_labels(arm):
            for group in referenced_groups:
                if table.count(t, arm, group) == 0:
                    report.empty_cells.append((t, group))
                    report.warnings.append(f"空单元 (t={t}, {group})")

    for arm, share in report.arm_shares.items():
        if share < min_share:
            report.low_shares.append(f"arm={arm}")
            report.warnings.append(f"处理组 '{arm}' 占比 {share:.4f} 低于下限 {min_share}")
    for group, share in report.group_shares.items():
        if group in referenced_groups and share < min_share:
            report.low_shares.append(f"group={group}")
            report.warnings.append(f"分组 {group!r} 占比 {share:.4f} 低于下限 {min_share}")

    for message in report.warnings:
        logger.warning(message)
    return report


# ==========================================
# 连续处理的分箱方案
# ==========================================

def atom_label(value: float) -> str:
    return f"atom_{normalize_label(value)}"


def bin_label(index: int) -> str:
    return f"bin_{index:03d}"


@dataclass(frozen=True)
class PartitionScheme:
    """
    连续处理区间的 J* 个相邻分箱与离散原子点

    分箱左闭右开，最后一个分箱闭合；原子点先于分箱判定
    """
    bin_edges: Tuple[float, ...]
    atoms: Tuple[float, ...] = ()

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        if len(edges) < 2:
            raise ConfigError("分箱边界至少需要两个点 (J* >= 1)")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError(f"分箱边界必须严格递增: {edges}")
        object.__setattr__(self, 'bin_edges', edges)
        object.__setattr__(self, 'atoms', tuple(sorted(float(a) for a in self.atoms)))

    @property
    def J(self) -> int:
        return len(self.bin_edges) - 1

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(atom_label(a) for a in self.atoms) + tuple(bin_label(j) for j in range(self.J))

    @classmethod
    def equal_width(cls, low: float, high: float, J: int, atoms: Sequence[float] = ()) -> 'PartitionScheme':
        return cls(tuple(np.linspace(low, high, J + 1)), tuple(atoms))

    @classmethod
    def equal_mass(cls, doses: np.ndarray, J: int, atoms: Sequence[float] = ()) -> 'PartitionScheme':
        """按剔除原子点后的剂量分位数构造等质量分箱"""
        doses = np.asarray(doses, dtype=float)
        continuous_part = doses[~np.isin(doses, np.asarray(atoms, dtype=float))]
        if continuous_part.size == 0:
            raise ConfigError("剔除原子点后没有连续剂量，无法构造分位数分箱")
        edges = np.unique(np.quantile(continuous_part, np.linspace(0.0, 1.0, J + 1)))
        if edges.size - 1 < J:
            logger.warning(f"分位数分箱出现重复边界，J* 由 {J} 降为 {edges.size - 1}")
        if edges.size < 2:
            edges = np.array([edges[0], np.nextafter(edges[0], np.inf)])
        return cls(tuple(edges), tuple(atoms))

    def assign(self, doses: np.ndarray) -> np.ndarray:
        doses = np.asarray(doses, dtype=float)
        edges = np.asarray(self.bin_edges)
        index = np.searchsorted(edges, doses, side='right') - 1
        index[doses == edges[-1]] = self.J - 1
        is_atom = np.isin(doses, np.asarray(self.atoms, dtype=float))
        outside = ~is_atom & ((index < 0) | (index >= self.J))
        if outside.any():
            bad = float(doses[int(np.argmax(outside))])
            raise OutOfRangeDose(f"剂量 {bad} 不属于任何分箱或原子点", label=bad)
        bins = np.asarray([bin_label(j) for j in range(self.J)], dtype=object)
        out = bins[np.clip(index, 0, self.J - 1)]
        for value in self.atoms:
            out[doses == value] = atom_label(value)
        return out


def discretize(dataset: Dataset, partition: PartitionScheme) -> Dataset:
    """将连续剂量映射为分箱标签与原子标签"""
    if not dataset.continuous:
        # 已离散：分箱标签原样保留，等于原子点的取值映射为对应的原子标签
        known = set(partition.labels)
        atoms = {normalize_label(a): atom_label(a) for a in partition.atoms}
        mapping = {}
        for label in dataset.labels:
            if label in known:
                mapping[label] = label
            elif label in atoms:
                mapping[label] = atoms[label]
        unknown = set(dataset.labels) - set(mapping)
        if unknown:
            raise ConfigError(f"数据集已是离散标签，且包含分箱方案之外的标签: {sorted(map(str, unknown))}")
        if all(k == v for k, v in mapping.items()):
            return dataset
        treatment = np.asarray([mapping[normalize_label(v)] for v in dataset.treatment], dtype=object)
        return replace(dataset, treatment=treatment)
    labels = partition.assign(dataset.treatment)
    return replace(dataset, treatment=labels, continuous=False)


# ==========================================
# 数据读取
# ==========================================

@dataclass(frozen=True)
class DataBindings:
    """配置文件中的列名绑定"""
    outcome: str = "y"
    treatment: str = "t"
    covariates: Tuple[str, ...] = ()
    group: Optional[str] = None
    continuous: bool = False


def dataset_from_frame(frame: pd.DataFrame, bindings: DataBindings) -> Dataset:
    """
    从DataFrame构造数据集

    显式分组列作为协变量追加（分组必须是 X 的函数）
    """
    covariates = list(bindings.covariates)
    if bindings.group and bindings.group not in covariates:
        covariates.append(bindings.group)
    required = [bindings.outcome, bindings.treatment] + covariates
    for column in required:
        if column not in frame.columns:
            raise UnknownColumn(f"输入数据缺少列 '{column}'", label=column)
    for column in required:
        if frame[column].isna().any():
            raise MissingValue(f"列 '{column}' 存在缺失值", label=column)

    group_column = bindings.group
    values = frame[covariates].copy()
    if group_column and not pd.api.types.is_numeric_dtype(values[group_column]):
        # 非数值分组标签按排序编码
        codes = {label: k for k, label in enumerate(sorted_labels(values[group_column]))}
        logger.info(f"分组列 '{group_column}' 编码: {codes}")
        values[group_column] = values[group_column].map(lambda v: codes[normalize_label(v)])

    return Dataset(
        outcome=frame[bindings.outcome].to_numpy(dtype=float),
        treatment=frame[bindings.treatment].to_numpy(),
        covariates=values.to_numpy(dtype=float) if covariates else np.zeros((len(frame), 0)),
        covariate_names=tuple(covariates),
        continuous=bindings.continuous,
    )


def load_dataset(path: str, bindings: DataBindings) -> Dataset:
    """读取逗号分隔、带表头的数据文件"""
    try:
        frame = pd.read_csv(path, encoding='utf-8')
    except FileNotFoundError:
        raise ConfigError(f"找不到输入数据文件: {path}", label=path) from None
    dataset = dataset_from_frame(frame, bindings)
    logger.info(f"读取数据 {path}: n={dataset.n}, 协变量={list(dataset.covariate_names)}")
    return dataset
