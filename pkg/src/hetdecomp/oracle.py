#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
总体真值模块
对有限离散数据生成过程逐单元精确求和，计算全部分解参数的总体值。
概率与均值可以用 fractions.Fraction 给出，此时结果为精确有理数
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .decomp import ADIM_INDICES, D_INDICES, DIM_INDICES, ParameterId
from .errors import ConfigError, ZeroProbabilityCell
from .model import AggregationScheme, ColumnGroups, Contrast, Dataset, Label, normalize_label
from .nuisance import NuisanceEstimates


def _total(values: Iterable[Any]):
    values = list(values)
    if values and all(isinstance(v, float) for v in values):
        return math.fsum(values)
    return sum(values, 0)


def _is_close_to_one(value) -> bool:
    if isinstance(value, (Fraction, int)):
        return value == 1
    return abs(float(value) - 1.0) < 1e-12


@dataclass(frozen=True)
class DiscreteDgp:
    """
    有限支撑的离散数据生成过程

    Attributes:
        points: 协变量支撑点
        probabilities: P(X = x)
        labels: 有效处理标签
        propensities: e_t(x)，按 points × labels 排列
        outcome_means: μ_t(x)，按 points × labels 排列
        scheme: 聚合方案
        contrast: 默认对比
        noise_sd: 抽样时的正态噪声标准差（总体真值不使用）
    """
    points: Tuple[Tuple[float, ...], ...]
    probabilities: Tuple[Any, ...]
    labels: Tuple[Label, ...]
    propensities: Tuple[Tuple[Any, ...], ...]
    outcome_means: Tuple[Tuple[Any, ...], ...]
    scheme: AggregationScheme
    contrast: Optional[Contrast] = None
    noise_sd: float = 1.0
    covariate_names: Tuple[str, ...] = ()
    group_labels: Tuple[Label, ...] = field(init=False, default=())

    def __post_init__(self):
        object.__setattr__(self, 'points', tuple(tuple(float(v) for v in x) for x in self.points))
        object.__setattr__(self, 'labels', tuple(normalize_label(t) for t in self.labels))
        m, k = len(self.points), len(self.labels)
        if len(self.probabilities) != m or len(self.propensities) != m or len(self.outcome_means) != m:
            raise ConfigError("支撑点、概率、倾向得分和结果均值的行数必须一致")
        if not _is_close_to_one(_total(self.probabilities)):
            raise ConfigError("支撑点概率之和必须为1")
        for row in self.propensities:
            if len(row) != k or not _is_close_to_one(_total(row)):
                raise ConfigError("每个支撑点的倾向得分必须覆盖全部处理且和为1")
        for row in self.outcome_means:
            if len(row) != k or not all(math.isfinite(float(v)) for v in row):
                raise ConfigError("结果均值必须有限")
        names = tuple(self.covariate_names) or tuple(f"x{j}" for j in range(len(self.points[0])))
        object.__setattr__(self, 'covariate_names', names)
        support = self.support_dataset()
        object.__setattr__(self, 'group_labels', tuple(self.scheme.group_of(support)))

    def support_dataset(self) -> Dataset:
        """每个支撑点一行的数据集，用于求分组标签"""
        m = len(self.points)
        return Dataset(outcome=np.zeros(m), treatment=[self.labels[0]] * m,
                       covariates=np.asarray(self.points, dtype=float), covariate_names=self.covariate_names)

    def e(self, x: int, t: Label):
        return self.propensities[x][self.labels.index(normalize_label(t))]

    def mu(self, x: int, t: Label):
        return self.outcome_means[x][self.labels.index(normalize_label(t))]

    def in_group(self, x: int, group: Label) -> bool:
        return self.group_labels[x] == normalize_label(group)


class PopulationQuantities:
    """按定义计算总体聚合量"""

    def __init__(self, dgp: DiscreteDgp):
        self.dgp = dgp
        self.cells = range(len(dgp.points))

    def _p(self, x):
        return self.dgp.probabilities[x]

    def _require(self, value, what: str):
        if value == 0:
            raise ZeroProbabilityCell(f"条件事件 {what} 的概率为0", label=what)
        return value

    def arm_labels(self, arm: str):
        return self.dgp.scheme.arm_labels(arm)

    def p_g(self, group):
        return self._require(_total(self._p(x) for x in self.cells if self.dgp.in_group(x, group)), f"X∈{group}")

    def e_a_x(self, x, arm):
        return _total(self.dgp.e(x, t) for t in self.arm_labels(arm))

    def p_a(self, arm):
        return self._require(_total(self._p(x) * self.e_a_x(x, arm) for x in self.cells), f"T∈{arm}")

    def p_ag(self, arm, group):
        return self._require(_total(self._p(x) * self.e_a_x(x, arm) for x in self.cells
                                    if self.dgp.in_group(x, group)), f"T∈{arm},X∈{group}")

    def e_t(self, t):
        return _total(self._p(x) * self.dgp.e(x, t) for x in self.cells)

    def mu_t(self, t):
        return _total(self._p(x) * self.dgp.mu(x, t) for x in self.cells)

    def e_ta(self, t, arm):
        return self.e_t(t) / self.p_a(arm)

    def cond(self, group, f):
        """E[f(X) | X∈X_g]"""
        return _total(self._p(x) * f(x) for x in self.cells if self.dgp.in_group(x, group)) / self.p_g(group)

    def e_t_g(self, t, group):
        return self.cond(group, lambda x: self.dgp.e(x, t))

    def mu_t_g(self, t, group):
        return self.cond(group, lambda x: self.dgp.mu(x, t))

    def e_a_g(self, arm, group):
        return self._require(self.cond(group, lambda x: self.e_a_x(x, arm)), f"T∈{arm}|X∈{group}")

    def e_ta_x(self, x, t, arm):
        share = self.e_a_x(x, arm)
        if share == 0:
            raise ZeroProbabilityCell(f"支撑点 {self.dgp.points[x]} 上 P(T∈{arm}|X) = 0", label=arm)
        return self.dgp.e(x, t) / share

    def e_ta_g(self, t, arm, group):
        return self.e_t_g(t, group) / self.e_a_g(arm, group)

    def mean_e_ta_g(self, t, arm, group):
        return self.cond(group, lambda x: self.e_ta_x(x, t, arm))

    def cov_e_mu(self, t, group):
        """Cov(e_t(X), μ_t(X) | X_g)"""
        return (self.cond(group, lambda x: self.dgp.e(x, t) * self.dgp.mu(x, t))
                - self.e_t_g(t, group) * self.mu_t_g(t, group))

    def cov_eta_mu(self, t, arm, group):
        """Cov(e_ta(X), μ_t(X) | X_g)"""
        return (self.cond(group, lambda x: self.e_ta_x(x, t, arm) * self.dgp.mu(x, t))
                - self.mean_e_ta_g(t, arm, group) * self.mu_t_g(t, group))

    def cell_mean(self, arm, group):
        """E[Y | T∈T_a, X∈X_g]"""
        total = _total(self._p(x) * self.dgp.e(x, t) * self.dgp.mu(x, t)
                       for x in self.cells if self.dgp.in_group(x, group) for t in self.arm_labels(arm))
        return total / self.p_ag(arm, group)

    def adjusted_mean(self, arm, group):
        """E[E[Y | T∈T_a, X] | X∈X_g]"""
        return self.cond(group, lambda x: _total(self.e_ta_x(x, t, arm) * self.dgp.mu(x, t)
                                                 for t in self.arm_labels(arm)))


def population_d(dgp: DiscreteDgp, arm: str, group: Label,
                 quantities: Optional[PopulationQuantities] = None) -> Dict[str, Any]:
    """单均值分解 d0..d5 的总体值"""
    q = quantities or PopulationQuantities(dgp)
    labels = q.arm_labels(arm)
    e_ta = {t: q.e_ta(t, arm) for t in labels}
    mu = {t: q.mu_t(t) for t in labels}
    e_ta_g = {t: q.e_ta_g(t, arm, group) for t in labels}
    mu_g = {t: q.mu_t_g(t, group) for t in labels}
    return {
        "0": _total(e_ta[t] * mu[t] for t in labels),
        "1": _total(e_ta[t] * (mu_g[t] - mu[t]) for t in labels),
        "2": _total((e_ta_g[t] - e_ta[t]) * mu[t] for t in labels),
        "3": _total((e_ta_g[t] - e_ta[t]) * (mu_g[t] - mu[t]) for t in labels),
        "4": _total(q.cov_e_mu(t, group) for t in labels) / q.e_a_g(arm, group),
        "4'": _total(q.cov_eta_mu(t, arm, group) for t in labels),
        "5": _total((q.mean_e_ta_g(t, arm, group) - e_ta_g[t]) * mu_g[t] for t in labels),
    }


def population_synthetic_means(dgp: DiscreteDgp, arm: str, group: Label) -> Dict[str, Any]:
    """合成实验均值 s0..s3 的总体值"""
    q = PopulationQuantities(dgp)
    labels = q.arm_labels(arm)
    return {
        "0": _total(q.e_ta(t, arm) * q.mu_t(t) for t in labels),
        "1": _total(q.e_ta(t, arm) * q.mu_t_g(t, group) for t in labels),
        "2": _total(q.e_ta_g(t, arm, group) * q.mu_t(t) for t in labels),
        "3": _total(q.e_ta_g(t, arm, group) * q.mu_t_g(t, group) for t in labels),
    }


@dataclass
class PopulationDecomposition:
    """总体分解结果，参数名与估计报告一致"""
    contrast: Contrast
    values: Dict[str, Any]

    def __getitem__(self, parameter) -> Any:
        name = parameter.name if isinstance(parameter, ParameterId) else str(parameter)
        return self.values[name]

    def d(self, index: str, arm: str, group: Optional[Label] = None):
        groups = () if index == "0" else (group,)
        return self[ParameterId('d', index, (arm,), groups)]

    def delta(self, index: str, group: Optional[Label] = None):
        groups = () if index == "0" else (group,)
        return self[ParameterId('delta', index, self.contrast.arms, groups)]

    def Delta(self, index: str):
        return self[ParameterId('Delta', index, self.contrast.arms, self.contrast.groups)]

    @property
    def dim(self):
        return self[ParameterId('DiM', 'plain', self.contrast.arms, self.contrast.groups)]

    @property
    def adim(self):
        return self[ParameterId('ADiM', 'plain', self.contrast.arms, self.contrast.groups)]


def population_decomposition(dgp: DiscreteDgp, contrast: Optional[Contrast] = None) -> PopulationDecomposition:
    """
    全部 d/δ/Δ、合成实验均值及 DiM/ADiM 的总体值

    Args:
        dgp: 离散数据生成过程
        contrast: 对比，默认使用 dgp.contrast
    """
    contrast = contrast or dgp.contrast
    if contrast is None:
        raise ConfigError("需要指定对比 (arm, reference_arm, group, reference_group)")
    q = PopulationQuantities(dgp)
    values: Dict[str, Any] = {}
    d = {(arm, group): population_d(dgp, arm, group, q) for arm in contrast.arms for group in contrast.groups}

    for (arm, group), parts in d.items():
        for index, value in parts.items():
            groups = () if index == "0" else (group,)
            values[ParameterId('d', index, (arm,), groups).name] = value
        for index, value in population_synthetic_means(dgp, arm, group).items():
            values[ParameterId('s', index, (arm,), (group,)).name] = value

    a, b = contrast.arms
    g, h = contrast.groups
    for group in contrast.groups:
        for index in D_INDICES:
            groups = () if index == "0" else (group,)
            values[ParameterId('delta', index, contrast.arms, groups).name] = d[(a, group)][index] - d[(b, group)][index]
    for index in D_INDICES[1:]:
        values[ParameterId('Delta', index, contrast.arms, contrast.groups).name] = (
            (d[(a, g)][index] - d[(b, g)][index]) - (d[(a, h)][index] - d[(b, h)][index]))

    values[ParameterId('DiM', 'plain', contrast.arms, contrast.groups).name] = (
        q.cell_mean(a, g) - q.cell_mean(b, g) - q.cell_mean(a, h) + q.cell_mean(b, h))
    values[ParameterId('ADiM', 'plain', contrast.arms, contrast.groups).name] = (
        q.adjusted_mean(a, g) - q.adjusted_mean(b, g) - q.adjusted_mean(a, h) + q.adjusted_mean(b, h))
    return PopulationDecomposition(contrast=contrast, values=values)


def population_regression_beta3(dgp: DiscreteDgp, contrast: Optional[Contrast] = None):
    """交互回归系数 β3 的总体值：四单元条件均值对比"""
    contrast = contrast or dgp.contrast
    if contrast is None:
        raise ConfigError("需要指定对比")
    q = PopulationQuantities(dgp)
    a, b = contrast.arms
    g, h = contrast.groups
    return q.cell_mean(a, g) - q.cell_mean(b, g) - q.cell_mean(a, h) + q.cell_mean(b, h)


def decomposition_identities(population: PopulationDecomposition) -> Dict[str, Any]:
    """总体恒等式的偏差（精确算术下为0）"""
    dim = _total(population.Delta(i) for i in DIM_INDICES) - population.dim
    adim = _total(population.Delta(i) for i in ADIM_INDICES) - population.adim
    return {'DiM': dim, 'ADiM': adim}


# ==========================================
# 枚举样本与真实冗余参数
# ==========================================

def enumerate_units(dgp: DiscreteDgp, units_per_mass: int) -> Dataset:
    """
    完全枚举数据集：单元 (x, t) 重复 P(X=x)·e_t(x)·units_per_mass 次，Y = μ_t(x)（无噪声）

    乘积必须为整数
    """
    outcome, treatment, covariates = [], [], []
    for x, point in enumerate(dgp.points):
        for t in dgp.labels:
            mass = dgp.probabilities[x] * dgp.e(x, t) * units_per_mass
            count = round(float(mass))
            if abs(float(mass) - count) > 1e-9:
                raise ConfigError(f"单元 (x={point}, t={t}) 的样本数 {float(mass)} 不是整数，请增大 units_per_mass")
            outcome.extend([float(dgp.mu(x, t))] * count)
            treatment.extend([t] * count)
            covariates.extend([point] * count)
    return Dataset(outcome=np.asarray(outcome), treatment=treatment,
                   covariates=np.asarray(covariates, dtype=float), covariate_names=dgp.covariate_names)


def true_nuisances(dgp: DiscreteDgp, dataset: Dataset) -> NuisanceEstimates:
    """以真实 e_t(x), μ_t(x) 构造颗粒冗余参数"""
    lookup = {point: x for x, point in enumerate(dgp.points)}
    rows = np.empty(dataset.n, dtype=np.int64)
    for i, point in enumerate(map(tuple, dataset.covariates)):
        if point not in lookup:
            raise ConfigError(f"样本协变量 {point} 不在数据生成过程的支撑上")
        rows[i] = lookup[point]
    e_table = np.asarray([[float(v) for v in row] for row in dgp.propensities])
    mu_table = np.asarray([[float(v) for v in row] for row in dgp.outcome_means])
    return NuisanceEstimates(labels=dgp.labels, e_hat=e_table[rows], mu_hat=mu_table[rows])


# ==========================================
# 示例数据生成过程
# ==========================================

def _two_arm_scheme(labels: Sequence[Label], group_column: str = "g") -> AggregationScheme:
    return AggregationScheme(arms={'treated': tuple(labels[1:]), 'control': (labels[0],)},
                             groups=ColumnGroups(group_column))


def targeting_dgp(noise_sd: float = 1.0) -> DiscreteDgp:
    """
    处理版本定向示例：T∈{0,1,2}，A = 1(T>0)，Y = T1 + 2·T2（无协变量效应异质性）
    P(T=1|A=1,G=1) = 2/3，P(T=1|A=1,G=0) = 1/3，P(A=1) = 1/2，P(G=1) = 1/2
    此时 Δ2 = β3 = −1/3，其余 Δ 为0
    """
    half, third, sixth = Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)
    return DiscreteDgp(
        points=((0.0,), (1.0,)),
        probabilities=(half, half),
        labels=(0, 1, 2),
        propensities=((half, sixth, third), (half, third, sixth)),
        outcome_means=((0, 1, 2), (0, 1, 2)),
        scheme=_two_arm_scheme((0, 1, 2)),
        contrast=Contrast('treated', 'control', 1, 0),
        noise_sd=noise_sd,
        covariate_names=("g",),
    )


def covariance_dgp(noise_sd: float = 1.0) -> DiscreteDgp:
    """
    个体定向示例：X = (X1, G)，X1, G ~ Bernoulli(1/2) 独立，τ1 = 0，τ2(X) = X1 − 1/2
    P(T=2|A=1,G=0) = 1/2，P(T=2|A=1,G=1,X1) = 2/3 − X1/3，P(A=1) = 1/2
    此时 Δ4 = Δ4′ = −Var(X1|A=1,G=1)/3 = −1/12，其余 Δ 为0
    """
    quarter, half = Fraction(1, 4), Fraction(1, 2)
    points, propensities, means = [], [], []
    for g in (0, 1):
        for x1 in (0, 1):
            p2 = half if g == 0 else Fraction(2, 3) - Fraction(x1, 3)
            points.append((float(x1), float(g)))
            propensities.append((half, half * (1 - p2), half * p2))
            means.append((0, 0, Fraction(x1) - half))
    return DiscreteDgp(
        points=tuple(points),
        probabilities=(quarter,) * 4,
        labels=(0, 1, 2),
        propensities=tuple(propensities),
        outcome_means=tuple(means),
        scheme=_two_arm_scheme((0, 1, 2)),
        contrast=Contrast('treated', 'control', 1, 0),
        noise_sd=noise_sd,
        covariate_names=("x1", "g"),
    )


def random_dgp(rng: np.random.Generator, n_labels: int = 3, n_points: int = 4,
               randomized: bool = False) -> DiscreteDgp:
    """
    随机小型离散数据生成过程（两个分组交替分配到支撑点）

    Args:
        randomized: 为真时倾向得分只依赖分组
    """
    probabilities = rng.dirichlet(np.ones(n_points))
    probabilities = tuple(float(p) for p in probabilities / probabilities.sum())
    group_propensities = {g: rng.dirichlet(np.ones(n_labels) * 2.0) for g in (0, 1)}
    points, propensities, means = [], [], []
    for x in range(n_points):
        g = x % 2
        e = group_propensities[g] if randomized else rng.dirichlet(np.ones(n_labels) * 2.0)
        e = e / e.sum()
        points.append((float(rng.normal()), float(g)))
        propensities.append(tuple(float(v) for v in e))
        means.append(tuple(float(v) for v in rng.normal(size=n_labels)))
    # 概率和的浮点误差归入最后一个元素
    probabilities = probabilities[:-1] + (1.0 - math.fsum(probabilities[:-1]),)
    propensities = [row[:-1] + (1.0 - math.fsum(row[:-1]),) for row in propensities]
    labels = tuple(range(n_labels))
    return DiscreteDgp(
        points=tuple(points),
        probabilities=probabilities,
        labels=labels,
        propensities=tuple(propensities),
        outcome_means=tuple(means),
        scheme=_two_arm_scheme(labels),
        contrast=Contrast('treated', 'control', 1, 0),
        covariate_names=("x1", "g"),
    )
