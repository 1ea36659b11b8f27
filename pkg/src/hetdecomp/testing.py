#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
强组效应同质性检验模块
Wald（ℓ2）、上确界（ℓ∞）与分解 Δ1 检验，以及三者的解析局部功效
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import ConfigError, InvalidAlpha, SingularCovariance, ZeroVariance
from .model import Contrast, Dataset, Label, normalize_label
from .moments import DENOMINATOR_FLOOR, AggregateKey, MomentContext, aggregate_components, solve_linear_moment
from .nuisance import NuisanceEstimates

logger = logging.getLogger(__name__)

METHODS = ('wald', 'supremum', 'delta1')


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0 or not math.isfinite(alpha):
        raise InvalidAlpha(f"显著性水平必须在 (0, 1) 内，当前为 {alpha}", label=alpha)
    return alpha


def gumbel_constants(J: int) -> Tuple[float, float]:
    """
    上确界统计量的 Gumbel 标准化常数

        a_J = √(2 log J) − (log log J + log 4π) / (2√(2 log J))
        b_J = 1 / √(2 log J)
    """
    if J < 2:
        raise ConfigError(f"Gumbel 常数要求 J ≥ 2，当前 J = {J}", label=J)
    root = math.sqrt(2.0 * math.log(J))
    a_J = root - (math.log(math.log(J)) + math.log(4.0 * math.pi)) / (2.0 * root)
    return a_J, 1.0 / root


@dataclass(frozen=True)
class StrongNullResult:
    """强零假设检验结果"""
    statistic: float
    critical_value: float
    p_value: float
    J: int
    method: str
    alpha: float = 0.05

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> Dict[str, float]:
        return {
            'method': self.method,
            'statistic': self.statistic,
            'critical_value': self.critical_value,
            'p_value': self.p_value,
            'J': self.J,
            'alpha': self.alpha,
            'reject': self.reject,
        }


# ==========================================
# 检验
# ==========================================

def wald_test(group_mean_diffs: Sequence[float], covariance: np.ndarray, alpha: float = 0.05) -> StrongNullResult:
    """
    ℓ2 检验

    Args:
        group_mean_diffs: 对比向量 m̂，长度 J
        covariance: m̂ 的估计量协方差 V = Σ̂/n

    统计量 (1/J)·m̂′V⁻¹m̂ 与 χ²(J) 的 1−α 分位数除以 J 比较
    """
    alpha = check_alpha(alpha)
    m = np.asarray(group_mean_diffs, dtype=float).reshape(-1)
    V = np.atleast_2d(np.asarray(covariance, dtype=float))
    J = m.shape[0]
    if V.shape != (J, J):
        raise ConfigError(f"协方差形状 {V.shape} 与对比长度 {J} 不一致")
    if not np.all(np.isfinite(V)) or np.linalg.matrix_rank(V) < J:
        raise SingularCovariance(f"{J}×{J} 协方差矩阵不可逆")
    try:
        factor = np.linalg.cholesky((V + V.T) / 2.0)
    except np.linalg.LinAlgError:
        raise SingularCovariance(f"{J}×{J} 协方差矩阵非正定") from None
    whitened = np.linalg.solve(factor, m)
    quadratic = float(whitened @ whitened)
    return StrongNullResult(
        statistic=quadratic / J,
        critical_value=float(stats.chi2.ppf(1.0 - alpha, J)) / J,
        p_value=float(stats.chi2.sf(quadratic, J)),
        J=J,
        method='wald',
        alpha=alpha,
    )


def supremum_test(group_mean_diffs: Sequence[float], scales: Sequence[float], alpha: float = 0.05) -> StrongNullResult:
    """
    ℓ∞ 检验：max_t |m̂_t / s_t| 与 a_J + b_J·G⁻¹(1−α) 比较
    J = 1 时退化为双侧正态检验
    """
    alpha = check_alpha(alpha)
    m = np.asarray(group_mean_diffs, dtype=float).reshape(-1)
    s = np.asarray(scales, dtype=float).reshape(-1)
    if s.shape != m.shape:
        raise ConfigError(f"标准化尺度长度 {s.shape[0]} 与对比长度 {m.shape[0]} 不一致")
    if not np.all(s > 0):
        raise ConfigError("标准化尺度必须全部为正")
    J = m.shape[0]
    statistic = float(np.max(np.abs(m / s)))
    if J == 1:
        return StrongNullResult(
            statistic=statistic,
            critical_value=float(stats.norm.ppf(1.0 - alpha / 2.0)),
            p_value=float(2.0 * stats.norm.sf(statistic)),
            J=1,
            method='supremum',
            alpha=alpha,
        )
    a_J, b_J = gumbel_constants(J)
    return StrongNullResult(
        statistic=statistic,
        critical_value=a_J + b_J * float(stats.gumbel_r.ppf(1.0 - alpha)),
        p_value=float(stats.gumbel_r.sf((statistic - a_J) / b_J)),
        J=J,
        method='supremum',
        alpha=alpha,
    )


def delta1_test(report, alpha: Optional[float] = None) -> StrongNullResult:
    """
    弱同质性 Δ1 = 0 的双侧 z 检验（拒绝即足以拒绝强同质性）

    Args:
        report: DecompositionReport
        alpha: 缺省时使用报告的 alpha
    """
    row = report.Delta("1")
    if bool(row['degenerate']):
        raise ZeroVariance("Δ̂1 的方差退化，无法检验", label=row.name)
    return z_test(float(row['z']), report.alpha if alpha is None else alpha)


def z_test(z: float, alpha: float = 0.05, method: str = 'delta1') -> StrongNullResult:
    """双侧正态检验"""
    alpha = check_alpha(alpha)
    statistic = abs(float(z))
    return StrongNullResult(
        statistic=statistic,
        critical_value=float(stats.norm.ppf(1.0 - alpha / 2.0)),
        p_value=float(2.0 * stats.norm.sf(statistic)),
        J=1,
        method=method,
        alpha=alpha,
    )


# ==========================================
# 强零假设对比
# ==========================================

@dataclass
class StrongNullContrasts:
    """
    张成强零假设的 |T_a|+|T_a′|−1 个线性无关对比

    u_t = μ_t(X_g) − μ_t(X_g′)，对比为 u_t − u_{t0}（t0 为 a′ 的参照版本）
    """
    names: Tuple[str, ...]
    estimates: np.ndarray
    influence: np.ndarray
    reference_label: Label
    n: int

    @property
    def J(self) -> int:
        return len(self.names)

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.influence.T @ self.influence / self.n

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma_hat / self.n

    @property
    def scales(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _group_difference(t: Label, contrast: Contrast, context: MomentContext) -> Tuple[float, np.ndarray]:
    value, column = 0.0, np.zeros(context.dataset.n)
    for group, sign in zip(contrast.groups, (1.0, -1.0)):
        context.require_cell(t, group)
        theta, if_column = solve_linear_moment(
            aggregate_components(AggregateKey.make('mu_t_g', t=t, group=group), context))
        value += sign * theta
        column = column + sign * if_column
    return value, column


def strong_null_contrasts(contrast: Contrast, dataset: Dataset, nuisances: NuisanceEstimates,
                          reference_label: Optional[Label] = None, strict_cells: bool = True,
                          denominator_floor: float = DENOMINATOR_FLOOR) -> StrongNullContrasts:
    """
    由 μ_t(X_g) 的影响函数列构造强零假设对比

    Args:
        contrast: 对比 (a, a′, g, g′)
        reference_label: a′ 的参照版本，默认取其第一个标签
        strict_cells: 为假时允许空的 (t, g) 单元
    """
    context = MomentContext(dataset, nuisances, denominator_floor=denominator_floor, strict_cells=strict_cells)
    scheme = context.scheme
    reference_labels = scheme.arm_labels(contrast.reference_arm)
    t0 = reference_labels[0] if reference_label is None else normalize_label(reference_label)
    if t0 not in reference_labels:
        raise ConfigError(f"参照版本 {t0!r} 不属于处理组 '{contrast.reference_arm}'", label=t0)
    versions: List[Label] = list(scheme.arm_labels(contrast.arm)) + [t for t in reference_labels if t != t0]
    if not versions:
        raise ConfigError("强零假设至少需要一个对比")

    base_value, base_column = _group_difference(t0, contrast, context)
    names, values, columns = [], [], []
    for t in versions:
        value, column = _group_difference(t, contrast, context)
        names.append(f"u({t})-u({t0})")
        values.append(value - base_value)
        columns.append(column - base_column)
    return StrongNullContrasts(
        names=tuple(names),
        estimates=np.asarray(values),
        influence=np.column_stack(columns),
        reference_label=t0,
        n=dataset.n,
    )


def strong_null_tests(contrast: Contrast, dataset: Dataset, nuisances: NuisanceEstimates, report=None,
                      alpha: float = 0.05, strict_cells: bool = True,
                      denominator_floor: float = DENOMINATOR_FLOOR) -> Dict[str, StrongNullResult]:
    """一次计算三种检验；report 缺省时跳过 Δ1 检验"""
    contrasts = strong_null_contrasts(contrast, dataset, nuisances, strict_cells=strict_cells,
                                      denominator_floor=denominator_floor)
    results = {
        'wald': wald_test(contrasts.estimates, contrasts.covariance, alpha),
        'supremum': supremum_test(contrasts.estimates, contrasts.scales, alpha),
    }
    if report is not None:
        results['delta1'] = delta1_test(report, alpha)
    return results


# ==========================================
# 解析功效
# ==========================================

@dataclass(frozen=True)
class PowerSpec:
    """
    局部备择下的解析功效输入

    Attributes:
        xi: 标准化局部备择 ξ，长度 J
        e_ta: 权重 e_ta，默认均匀 1/J
        alpha: 显著性水平
    """
    xi: Tuple[float, ...]
    e_ta: Tuple[float, ...] = ()
    alpha: float = 0.05

    def __post_init__(self):
        xi = tuple(float(v) for v in np.asarray(self.xi, dtype=float).reshape(-1))
        if not xi:
            raise ConfigError("ξ 不能为空")
        e_ta = tuple(float(v) for v in np.asarray(self.e_ta, dtype=float).reshape(-1)) or (1.0 / len(xi),) * len(xi)
        if len(e_ta) != len(xi):
            raise ConfigError(f"e_ta 长度 {len(e_ta)} 与 ξ 长度 {len(xi)} 不一致")
        object.__setattr__(self, 'xi', xi)
        object.__setattr__(self, 'e_ta', e_ta)
        object.__setattr__(self, 'alpha', check_alpha(self.alpha))

    @property
    def J(self) -> int:
        return len(self.xi)

    @property
    def gumbel_constants(self) -> Tuple[float, float]:
        return gumbel_constants(self.J)

    @classmethod
    def dense(cls, J: int, value: float, alpha: float = 0.05) -> 'PowerSpec':
        return cls(xi=(value,) * J, alpha=alpha)


def analytic_power(spec: PowerSpec) -> Dict[str, float]:
    """
    三种检验的近似局部功效

        Wald:   1 − Φ(z_{1−α}/√(1+2r) − (1/√(2J))·r/√(1+2r))，r = ‖ξ‖²/J
        上确界: 1 − F_G(F_G⁻¹(1−α) − √(2 log J / J)·‖ξ‖∞)
        Δ1:     1 − Φ(z_{1−α/2} − Σe_ta ξ_t) + Φ(z_{α/2} − Σe_ta ξ_t)
    """
    xi = np.asarray(spec.xi)
    J = spec.J
    alpha = spec.alpha

    r = float(xi @ xi) / J
    root = math.sqrt(1.0 + 2.0 * r)
    wald = stats.norm.sf(stats.norm.ppf(1.0 - alpha) / root - (r / math.sqrt(2.0 * J)) / root)

    shift = math.sqrt(2.0 * math.log(J) / J) * float(np.max(np.abs(xi)))
    supremum = stats.gumbel_r.sf(stats.gumbel_r.ppf(1.0 - alpha) - shift)

    s = float(np.dot(spec.e_ta, xi))
    delta1 = stats.norm.sf(stats.norm.ppf(1.0 - alpha / 2.0) - s) + stats.norm.cdf(stats.norm.ppf(alpha / 2.0) - s)
    return {'wald': float(wald), 'supremum': float(supremum), 'delta1': float(delta1)}

