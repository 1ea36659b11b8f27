#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
分解参数模块
由八个基本参数组装 d/δ/Δ，堆叠影响函数得到 Σ̂，并对任意线性组合做推断

    d0 = Σθ8              d1 = Σ(θ4 − θ8)          d2 = Σ(θ5 − θ8)
    d3 = Σ(θ1 − θ5 − θ4 + θ8)                     d4 = Σ(θ7 − θ6) / P(T∈T_a|X_g)
    d4' = Σ(θ3 − θ2)      d5 = Σ(θ2 − θ1)

δ_j(a,a′,g) = d_j(a,g) − d_j(a′,g)，Δ_j(a,a′,g,g′) = δ_j(a,a′,g) − δ_j(a,a′,g′)
DiM = Δ1+Δ2+Δ3+Δ4，ADiM = Δ1+Δ2+Δ3+Δ4′+Δ5
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConfigError, EmptyCell, ZeroVariance
from .model import AggregationScheme, Contrast, Dataset, Label, normalize_label
from .moments import (
    DENOMINATOR_FLOOR, AggregateKey, MomentContext, adjusted_mean_components, aggregate_if,
    primitive_components, solve_linear_moment,
)
from .nuisance import NuisanceEstimates

logger = logging.getLogger(__name__)

D_INDICES = ("0", "1", "2", "3", "4", "4'", "5")
DIM_INDICES = ("1", "2", "3", "4")
ADIM_INDICES = ("1", "2", "3", "4'", "5")
SYNTHETIC_INDICES = ("0", "1", "2", "3")
LEVELS = ("d", "delta", "Delta", "s", "DiM", "ADiM")


@dataclass(frozen=True)
class ParameterId:
    """
    分解参数标识

    level: d / delta / Delta，另有 s（合成实验均值）与 DiM / ADiM（直接估计量）
    """
    level: str
    index: str
    arms: Tuple[str, ...]
    groups: Tuple[Label, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'index', str(self.index))
        object.__setattr__(self, 'arms', tuple(str(a) for a in self.arms))
        object.__setattr__(self, 'groups', tuple(normalize_label(g) for g in self.groups))
        if self.level not in LEVELS:
            raise ConfigError(f"未知的参数层级 '{self.level}'", label=self.level)
        expected_arms = 1 if self.level in ('d', 's') else 2
        if len(self.arms) != expected_arms:
            raise ConfigError(f"{self.level} 层参数需要 {expected_arms} 个处理组，收到 {self.arms}")
        if self.level in ('d', 'delta') and self.index == "0":
            expected_groups = 0
        elif self.level in ('d', 'delta', 's'):
            expected_groups = 1
        else:
            expected_groups = 2
        if len(self.groups) != expected_groups:
            raise ConfigError(f"{self.level}{self.index} 需要 {expected_groups} 个分组，收到 {self.groups}")

    @property
    def name(self) -> str:
        arms = ",".join(self.arms)
        if not self.groups:
            return f"{self.level}{self.index}({arms})"
        return f"{self.level}{self.index}({arms};{','.join(str(g) for g in self.groups)})"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, eq=False)
class ParameterEstimate:
    parameter: ParameterId
    value: float
    if_column: np.ndarray


# ==========================================
# 组装
# ==========================================

def _primitive_sums(arm: str, group: Label, context: MomentContext,
                    primitives: Sequence[int] = tuple(range(1, 9))) -> Dict[int, Tuple[float, np.ndarray]]:
    """Σ_{t∈T_a} θ_p 及其影响函数列"""
    sums = {}
    for p in primitives:
        key = ('sum', p, arm, None if p == 8 else group)
        if key not in context.memo:
            value = 0.0
            column = np.zeros(context.dataset.n)
            for t in context.scheme.arm_labels(arm):
                theta, if_column = solve_linear_moment(
                    primitive_components(p, t, arm, group, context.dataset, context.nuisances, context))
                value += theta
                column = column + if_column
            context.memo[key] = (value, column)
        sums[p] = context.memo[key]
    return sums


def _context(dataset: Dataset, nuisances: NuisanceEstimates, context: Optional[MomentContext]) -> MomentContext:
    return context if context is not None else MomentContext(dataset, nuisances)


def estimate_baseline(arm: str, dataset: Dataset, nuisances: NuisanceEstimates,
                      context: Optional[MomentContext] = None) -> ParameterEstimate:
    """d0(a) = Σ e_ta μ_t，不依赖分组"""
    ctx = _context(dataset, nuisances, context)
    value, column = _primitive_sums(arm, None, ctx, primitives=(8,))[8]
    return ParameterEstimate(ParameterId('d', '0', (arm,)), value, column)


def estimate_d(arm: str, group: Label, dataset: Dataset, nuisances: NuisanceEstimates,
               context: Optional[MomentContext] = None) -> Dict[str, ParameterEstimate]:
    """
    单均值分解 d0..d5（含 d4′）及其影响函数列

    Returns:
        index -> ParameterEstimate
    """
    ctx = _context(dataset, nuisances, context)
    group = normalize_label(group)
    S = _primitive_sums(arm, group, ctx)

    def combine(weights: Mapping[int, float]) -> Tuple[float, np.ndarray]:
        value = sum(w * S[p][0] for p, w in weights.items())
        column = np.sum([w * S[p][1] for p, w in weights.items()], axis=0)
        return value, column

    out = {}
    combos = {
        "1": {4: 1.0, 8: -1.0},
        "2": {5: 1.0, 8: -1.0},
        "3": {1: 1.0, 5: -1.0, 4: -1.0, 8: 1.0},
        "4'": {3: 1.0, 2: -1.0},
        "5": {2: 1.0, 1: -1.0},
    }
    out["0"] = estimate_baseline(arm, dataset, nuisances, ctx)
    for index, weights in combos.items():
        value, column = combine(weights)
        out[index] = ParameterEstimate(ParameterId('d', index, (arm,), (group,)), value, column)

    # d4：协方差项除以 P(T∈T_a|X_g)，商的链式法则
    share_key = AggregateKey.make('e_a_g', arm=arm, group=group)
    share = ctx.plugin('e_a_g', arm=arm, group=group)
    share_if = aggregate_if(share_key, dataset, nuisances, ctx)
    cov_value, cov_column = combine({7: 1.0, 6: -1.0})
    value = cov_value / share
    column = cov_column / share - share_if * cov_value / share ** 2
    out["4"] = ParameterEstimate(ParameterId('d', '4', (arm,), (group,)), value, column)
    return {index: out[index] for index in D_INDICES}


def estimate_synthetic(arm: str, group: Label, dataset: Dataset, nuisances: NuisanceEstimates,
                       context: Optional[MomentContext] = None) -> Dict[str, ParameterEstimate]:
    """
    合成实验均值：
    s0 = Σe_ta μ_t，s1 = Σe_ta μ_t(X_g)，s2 = Σe_ta(X_g) μ_t，s3 = Σe_ta(X_g) μ_t(X_g)（分层实验）
    """
    ctx = _context(dataset, nuisances, context)
    group = normalize_label(group)
    S = _primitive_sums(arm, group, ctx, primitives=(8, 4, 5, 1))
    return {
        index: ParameterEstimate(ParameterId('s', index, (arm,), (group,)), *S[p])
        for index, p in zip(SYNTHETIC_INDICES, (8, 4, 5, 1))
    }


def _difference(level: str, index: str, arms, groups, first: ParameterEstimate,
                second: ParameterEstimate) -> ParameterEstimate:
    return ParameterEstimate(ParameterId(level, index, arms, groups),
                             first.value - second.value, first.if_column - second.if_column)


def estimate_delta(arm: str, reference_arm: str, group: Label, dataset: Dataset,
                   nuisances: NuisanceEstimates, context: Optional[MomentContext] = None
                   ) -> Dict[str, ParameterEstimate]:
    """δ_j(a,a′,g) = d_j(a,g) − d_j(a′,g)"""
    ctx = _context(dataset, nuisances, context)
    first = estimate_d(arm, group, dataset, nuisances, ctx)
    second = estimate_d(reference_arm, group, dataset, nuisances, ctx)
    return {
        index: _difference('delta', index, (arm, reference_arm), () if index == "0" else (group,),
                           first[index], second[index])
        for index in D_INDICES
    }


def estimate_Delta(contrast: Contrast, dataset: Dataset, nuisances: NuisanceEstimates,
                   context: Optional[MomentContext] = None) -> Dict[str, ParameterEstimate]:
    """Δ_j(a,a′,g,g′) = δ_j(a,a′,g) − δ_j(a,a′,g′)，j ≥ 1（Δ0 恒为0）"""
    ctx = _context(dataset, nuisances, context)
    first = estimate_delta(contrast.arm, contrast.reference_arm, contrast.group, dataset, nuisances, ctx)
    second = estimate_delta(contrast.arm, contrast.reference_arm, contrast.reference_group, dataset, nuisances, ctx)
    return {
        index: _difference('Delta', index, contrast.arms, contrast.groups, first[index], second[index])
        for index in D_INDICES[1:]
    }


def _four_cell(level: str, contrast: Contrast, cell) -> ParameterEstimate:
    a, b = contrast.arms
    g, h = contrast.groups
    value = cell(a, g)[0] - cell(b, g)[0] - cell(a, h)[0] + cell(b, h)[0]
    column = cell(a, g)[1] - cell(b, g)[1] - cell(a, h)[1] + cell(b, h)[1]
    return ParameterEstimate(ParameterId(level, 'plain', contrast.arms, contrast.groups), value, column)


def estimate_dim(contrast: Contrast, dataset: Dataset, nuisances: NuisanceEstimates,
                 context: Optional[MomentContext] = None) -> ParameterEstimate:
    """四单元样本均值对比 DiM̂_plain"""
    ctx = _context(dataset, nuisances, context)

    def cell(arm, group):
        key = AggregateKey.make('m_a_g', arm=arm, group=group)
        return ctx.nuisances.aggregate(key), aggregate_if(key, dataset, nuisances, ctx)

    return _four_cell('DiM', contrast, cell)


def estimate_adim(contrast: Contrast, dataset: Dataset, nuisances: NuisanceEstimates,
                  context: Optional[MomentContext] = None) -> ParameterEstimate:
    """协变量调整后的 ADiM̂（双稳健）"""
    ctx = _context(dataset, nuisances, context)

    def cell(arm, group):
        return solve_linear_moment(adjusted_mean_components(arm, group, ctx))

    return _four_cell('ADiM', contrast, cell)


# ==========================================
# 影响函数矩阵与推断
# ==========================================

class InfluenceMatrix:
    """
    n × p 影响函数矩阵，Σ̂ = E_n[ÎF ÎF′]

    Σ̂ 逐行沿连续轴求和（成对求和），结果与线程数无关
    """

    def __init__(self, estimates: Sequence[ParameterEstimate]):
        if not estimates:
            raise ConfigError("影响函数矩阵至少需要一个参数")
        self.parameters: Tuple[ParameterId, ...] = tuple(e.parameter for e in estimates)
        self.names: Tuple[str, ...] = tuple(p.name for p in self.parameters)
        if len(set(self.names)) != len(self.names):
            raise ConfigError("影响函数矩阵中存在重复参数")
        self.estimates = np.array([e.value for e in estimates], dtype=float)
        columns_t = np.ascontiguousarray(np.vstack([e.if_column for e in estimates]))
        self.n = columns_t.shape[1]
        self._columns_t = columns_t
        self._position = {name: k for k, name in enumerate(self.names)}
        self.sigma_hat = self._sigma(columns_t)

    @staticmethod
    def _sigma(columns_t: np.ndarray) -> np.ndarray:
        p, n = columns_t.shape
        sigma = np.empty((p, p))
        for i in range(p):
            sigma[i] = np.sum(columns_t * columns_t[i], axis=1) / n
        return sigma

    @property
    def columns(self) -> np.ndarray:
        return self._columns_t.T

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns, columns=list(self.names))

    def position(self, parameter: Union[str, ParameterId]) -> int:
        name = parameter.name if isinstance(parameter, ParameterId) else str(parameter)
        try:
            return self._position[name]
        except KeyError:
            raise ConfigError(f"影响函数矩阵中没有参数 '{name}'", label=name) from None

    def weights(self, c: Union[Mapping[Any, float], Sequence[float], np.ndarray]) -> np.ndarray:
        if isinstance(c, Mapping):
            vector = np.zeros(len(self.names))
            for parameter, weight in c.items():
                vector[self.position(parameter)] += float(weight)
        else:
            vector = np.asarray(c, dtype=float).reshape(-1)
            if vector.shape[0] != len(self.names):
                raise ConfigError(f"权重长度 {vector.shape[0]} 与参数个数 {len(self.names)} 不一致")
        if not np.isfinite(vector).all() or not vector.any():
            raise ConfigError("权重向量必须有限且非零")
        return vector

    def variance_tolerance(self) -> float:
        return 1e-20 * float(np.mean(np.diag(self.sigma_hat)))

    def diagnostics(self) -> Dict[str, float]:
        means = np.abs(self._columns_t.mean(axis=1))
        eigenvalues = np.linalg.eigvalsh(self.sigma_hat)
        return {
            'max_abs_column_mean': float(means.max()),
            'min_eigenvalue': float(eigenvalues.min()),
            'trace': float(np.trace(self.sigma_hat)),
        }


@dataclass(frozen=True)
class Inference:
    estimate: float
    se: float
    z: float
    p: float

    def confidence_interval(self, alpha: float = 0.05) -> Tuple[float, float]:
        half = stats.norm.ppf(1.0 - alpha / 2.0) * self.se
        return self.estimate - half, self.estimate + half


def infer(c, influence_matrix: InfluenceMatrix) -> Inference:
    """
    线性组合 c′θ 的正态推断

    SE = sqrt(c′Σ̂c / n)，p 为双侧正态p值
    """
    weights = influence_matrix.weights(c)
    estimate = float(weights @ influence_matrix.estimates)
    variance = float(weights @ influence_matrix.sigma_hat @ weights)
    if variance <= influence_matrix.variance_tolerance():
        raise ZeroVariance(f"c′Σ̂c = {variance:.3g}，线性组合方差退化")
    se = float(np.sqrt(variance / influence_matrix.n))
    z = estimate / se
    return Inference(estimate, se, z, float(2.0 * stats.norm.sf(abs(z))))


# ==========================================
# 报告
# ==========================================

@dataclass
class DecompositionReport:
    """分解结果：点估计、标准误、p值、恒等式诊断与冗余参数诊断"""
    contrast: Contrast
    n: int
    alpha: float
    table: pd.DataFrame
    influence: InfluenceMatrix
    identity: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, Any] = field(default_factory=dict)

    def row(self, parameter: Union[str, ParameterId]) -> pd.Series:
        name = parameter.name if isinstance(parameter, ParameterId) else str(parameter)
        if name not in self.table.index:
            raise ConfigError(f"报告中没有参数 '{name}'", label=name)
        return self.table.loc[name]

    def estimate(self, parameter: Union[str, ParameterId]) -> float:
        return float(self.row(parameter)['estimate'])

    def Delta(self, index: str) -> pd.Series:
        return self.row(ParameterId('Delta', index, self.contrast.arms, self.contrast.groups))

    def to_dict(self) -> Dict[str, Any]:
        records = []
        for name, row in self.table.iterrows():
            records.append({
                'parameter': name,
                'level': row['level'],
                'index': row['index'],
                'arms': list(row['arms']),
                'groups': [_json_label(g) for g in row['groups']],
                'estimate': float(row['estimate']),
                'se': float(row['se']),
                'z': float(row['z']),
                'p': float(row['p']),
                'ci_low': float(row['ci_low']),
                'ci_high': float(row['ci_high']),
                'degenerate': bool(row['degenerate']),
            })
        return {
            'contrast': {
                'arm': self.contrast.arm,
                'reference_arm': self.contrast.reference_arm,
                'group': _json_label(self.contrast.group),
                'reference_group': _json_label(self.contrast.reference_group),
            },
            'n': self.n,
            'alpha': self.alpha,
            'seeds': self.seeds,
            'parameters': records,
            'identity': self.identity,
            'diagnostics': self.diagnostics,
            'sigma': {
                'names': list(self.influence.names),
                'matrix': self.influence.sigma_hat.tolist(),
            },
        }

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2, default=_json_default)
        return path

    def plot_table(self) -> pd.DataFrame:
        """
        柱状图数据：(estimand, component, group, value, se, p)

        每个分组的 δ_j 条形与分组差 Δ_j 条形，分别对应 DiM 和 ADiM 的分解
        """
        rows = []
        g, h = self.contrast.groups
        for estimand, indices in (('DiM', DIM_INDICES), ('ADiM', ADIM_INDICES)):
            for index in indices:
                for group in (g, h):
                    row = self.row(ParameterId('delta', index, self.contrast.arms, (group,)))
                    rows.append((estimand, f"delta{index}", str(group), row['estimate'], row['se'], row['p']))
                row = self.Delta(index)
                rows.append((estimand, f"Delta{index}", f"{g}-{h}", row['estimate'], row['se'], row['p']))
            total = self.row(ParameterId(estimand, 'plain', self.contrast.arms, self.contrast.groups))
            rows.append((estimand, 'total', f"{g}-{h}", total['estimate'], total['se'], total['p']))
        return pd.DataFrame(rows, columns=['estimand', 'component', 'group', 'value', 'se', 'p'])


def _json_label(label: Label):
    return normalize_label(label)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def _summarize(influence: InfluenceMatrix, alpha: float) -> pd.DataFrame:
    rows = []
    z_crit = stats.norm.ppf(1.0 - alpha / 2.0)
    for k, parameter in enumerate(influence.parameters):
        estimate = float(influence.estimates[k])
        try:
            result = infer({parameter.name: 1.0}, influence)
            se, z, p, degenerate = result.se, result.z, result.p, False
        except ZeroVariance:
            # 退化参数（例如 g = g′）：SE 0，p = 1
            se, z, p, degenerate = 0.0, 0.0, 1.0, True
        rows.append({
            'parameter': parameter.name,
            'level': parameter.level,
            'index': parameter.index,
            'arms': parameter.arms,
            'groups': parameter.groups,
            'estimate': estimate,
            'se': se,
            'z': z,
            'p': p,
            'ci_low': estimate - z_crit * se,
            'ci_high': estimate + z_crit * se,
            'degenerate': degenerate,
        })
    return pd.DataFrame(rows).set_index('parameter')


def identity_check(report: DecompositionReport, tolerance_se: float = 5.0) -> Dict[str, Any]:
    """
    核对分解恒等式：Σ_j Δ̂_j 与直接估计的 DiM̂ / ADiM̂ 之差，
    以及 d̂0+d̂1+d̂2+d̂3 与分层实验均值之差
    """
    arms, groups = report.contrast.arms, report.contrast.groups
    out: Dict[str, Any] = {}
    for estimand, indices in (('DiM', DIM_INDICES), ('ADiM', ADIM_INDICES)):
        decomposed = sum(report.Delta(index)['estimate'] for index in indices)
        plain = report.row(ParameterId(estimand, 'plain', arms, groups))
        gap = abs(decomposed - plain['estimate'])
        threshold = tolerance_se * plain['se'] if plain['se'] > 0 else 1e-8 * (1.0 + abs(plain['estimate']))
        out[estimand] = {
            'decomposed': float(decomposed),
            'plain': float(plain['estimate']),
            'plain_se': float(plain['se']),
            'gap': float(gap),
            'flagged': bool(gap > threshold),
        }
        if out[estimand]['flagged']:
            logger.warning(f"{estimand} 分解恒等式偏差 {gap:.4g} 超过 {tolerance_se} 个标准误")

    worst = 0.0
    for arm in arms:
        for group in groups:
            parts = sum(report.estimate(ParameterId('d', i, (arm,), () if i == "0" else (group,)))
                        for i in ("0", "1", "2", "3"))
            stratified = report.estimate(ParameterId('s', '3', (arm,), (group,)))
            worst = max(worst, abs(parts - stratified) / max(1.0, abs(stratified)))
    out['stratified_assembly_gap'] = float(worst)
    return out


def decompose(dataset: Dataset, contrast: Contrast, nuisances: NuisanceEstimates, alpha: float = 0.05,
              seeds: Optional[Dict[str, Any]] = None, validation=None,
              strict_cells: bool = True, denominator_floor: float = DENOMINATOR_FLOOR) -> DecompositionReport:
    """
    对一个对比 (a, a′, g, g′) 估计全部分解参数

    Args:
        dataset: 离散处理数据集
        contrast: 对比
        nuisances: 完整的冗余参数（fit_aggregates 之后）
        alpha: 置信区间水平
        seeds: 写入报告的随机种子
        validation: 可选的 ValidationReport，写入诊断
        strict_cells: 为假时允许空的 (t, g) 单元
        denominator_floor: 插入概率分母下限，低于它报 DegenerateDenominator

    Returns:
        DecompositionReport
    """
    ctx = MomentContext(dataset, nuisances, denominator_floor=denominator_floor, strict_cells=strict_cells)
    for group in contrast.groups:
        if not ctx.ind_g(group).any():
            raise EmptyCell(f"分组 {group!r} 没有样本", label=group)

    estimates: List[ParameterEstimate] = []
    for arm in contrast.arms:
        for group in contrast.groups:
            d = estimate_d(arm, group, dataset, nuisances, ctx)
            estimates.extend(v for k, v in d.items() if k != "0")
        estimates.append(estimate_baseline(arm, dataset, nuisances, ctx))
    for group in contrast.groups:
        delta = estimate_delta(contrast.arm, contrast.reference_arm, group, dataset, nuisances, ctx)
        estimates.extend(delta.values())
    estimates.extend(estimate_Delta(contrast, dataset, nuisances, ctx).values())
    for arm in contrast.arms:
        for group in contrast.groups:
            estimates.extend(estimate_synthetic(arm, group, dataset, nuisances, ctx).values())
    estimates.append(estimate_dim(contrast, dataset, nuisances, ctx))
    estimates.append(estimate_adim(contrast, dataset, nuisances, ctx))

    # 同一参数（如 g = g′ 时）只保留一次
    unique: Dict[str, ParameterEstimate] = {}
    for estimate in estimates:
        unique.setdefault(estimate.parameter.name, estimate)
    influence = InfluenceMatrix(list(unique.values()))

    diagnostics = dict(nuisances.diagnostics())
    diagnostics['influence'] = influence.diagnostics()
    if validation is not None:
        diagnostics['warnings'] = list(validation.warnings)
        diagnostics['min_cell_count'] = min(validation.cell_table.counts.values(), default=0)

    report = DecompositionReport(
        contrast=contrast,
        n=dataset.n,
        alpha=alpha,
        table=_summarize(influence, alpha),
        influence=influence,
        diagnostics=diagnostics,
        seeds=dict(seeds or {}),
    )
    report.identity = identity_check(report)
    return report


# ==========================================
# 交互回归
# ==========================================

@dataclass(frozen=True)
class RegressionResult:
    beta3: float
    se: float
    coefficients: Tuple[float, float, float, float]


def regression_beta3(dataset: Dataset, scheme: AggregationScheme, contrast: Contrast) -> RegressionResult:
    """
    饱和交互回归 Y = β0 + β1·A + β2·G + β3·A·G 的最小二乘估计（HC0 标准误）
    样本限于 T∈T_a∪T_a′、X∈X_g∪X_g′
    """
    in_a = scheme.arm_indicator(dataset, contrast.arm)
    in_b = scheme.arm_indicator(dataset, contrast.reference_arm)
    in_g = scheme.group_indicator(dataset, contrast.group)
    in_h = scheme.group_indicator(dataset, contrast.reference_group)
    keep = (in_a | in_b) & (in_g | in_h)
    A = in_a[keep].astype(float)
    G = in_g[keep].astype(float)
    y = dataset.outcome[keep]
    design = np.column_stack([np.ones_like(A), A, G, A * G])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coef
    bread = np.linalg.pinv(design.T @ design)
    meat = (design * residual[:, None] ** 2).T @ design
    cov = bread @ meat @ bread
    return RegressionResult(float(coef[3]), float(np.sqrt(cov[3, 3])), tuple(float(c) for c in coef))
