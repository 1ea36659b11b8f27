#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
矩条件与影响函数模块

所有参数都写成加权线性矩 Ψ = Ψ_X (Ψ_Y − θ Ψ_T)：
- 聚合冗余参数（e_a, e_g, e_t, μ_t, e_ta, e_t(X_g), μ_t(X_g), e_ag, e_a(X_g),
  m_a(X_g), e_ta(X_g), E[e_ta(X)|X_g]）
- 八个基本参数 θ_{a,g,t,p}, p = 1..8

θ̂ = E_n[Ψ_X Ψ_Y] / E_n[Ψ_X Ψ_T]，Ψ 本身即影响函数列
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Dict, Hashable, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigError, DegenerateDenominator, EmptyCell, NonFinite
from .model import Dataset, Label, normalize_label

if TYPE_CHECKING:
    from .nuisance import NuisanceEstimates

logger = logging.getLogger(__name__)

# 权重分母中任何插入概率低于此值即报错
DENOMINATOR_FLOOR = 1e-6

PRIMITIVES = {
    1: "e_ta(X_g) mu_t(X_g)",
    2: "E[e_ta(X)|X_g] mu_t(X_g)",
    3: "E[e_ta(X) mu_t(X)|X_g]",
    4: "e_ta mu_t(X_g)",
    5: "e_ta(X_g) mu_t",
    6: "e_t(X_g) mu_t(X_g)",
    7: "E[e_t(X) mu_t(X)|X_g]",
    8: "e_ta mu_t",
}

# 聚合冗余参数名 -> 需要的索引 (t, arm, group)
AGGREGATE_ROWS = {
    'e_a': (False, True, False),
    'e_g': (False, False, True),
    'e_t': (True, False, False),
    'mu_t': (True, False, False),
    'e_ag': (False, True, True),
    'e_ta': (True, True, False),
    'e_t_g': (True, False, True),
    'mu_t_g': (True, False, True),
    'e_a_g': (False, True, True),
    'm_a_g': (False, True, True),
    'e_ta_g': (True, True, True),
    'E_e_ta_g': (True, True, True),
}

# 只含常数 Ψ_X 的行先求解，其余行以其解作为插入值
BASE_ROWS = ('e_a', 'e_g', 'e_t', 'mu_t', 'e_ag')
PROBABILITY_ROWS = ('e_a', 'e_g', 'e_ag', 'e_a_g')


class AggregateKey(NamedTuple):
    """聚合冗余参数键"""
    name: str
    t: Optional[Label] = None
    arm: Optional[str] = None
    group: Optional[Label] = None

    @classmethod
    def make(cls, name: str, t: Optional[Label] = None, arm: Optional[str] = None,
             group: Optional[Label] = None) -> 'AggregateKey':
        if name not in AGGREGATE_ROWS:
            raise ConfigError(f"未知的聚合冗余参数 '{name}'", label=name)
        need_t, need_arm, need_group = AGGREGATE_ROWS[name]
        return cls(
            name,
            normalize_label(t) if need_t else None,
            str(arm) if need_arm else None,
            normalize_label(group) if need_group else None,
        )

    def __str__(self) -> str:
        parts = [f"{k}={v}" for k, v in (('t', self.t), ('a', self.arm), ('g', self.group)) if v is not None]
        return f"{self.name}[{','.join(parts)}]"


@dataclass(frozen=True)
class PrimitiveId:
    """基本参数 θ_{a,g,t,p}"""
    p: int
    t: Label
    arm: str
    group: Label

    def __post_init__(self):
        if self.p not in PRIMITIVES:
            raise ConfigError(f"基本参数编号必须在 1..8 之间，收到 {self.p}", label=self.p)

    def __str__(self) -> str:
        return f"theta{self.p}[t={self.t},a={self.arm},g={self.group}]"


@dataclass(frozen=True, eq=False)
class MomentComponents:
    """线性矩的三个分量 Ψ_X, Ψ_Y, Ψ_T"""
    psi_x: np.ndarray
    psi_y: np.ndarray
    psi_t: np.ndarray

    def __post_init__(self):
        n = np.shape(self.psi_y)[0]
        for name in ('psi_x', 'psi_y', 'psi_t'):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,))
            if not np.isfinite(value).all():
                raise NonFinite(f"{name} 含有非有限值")
            object.__setattr__(self, name, value)


def solve_linear_moment(components: MomentComponents) -> Tuple[float, np.ndarray]:
    """
    求解 E_n[Ψ_X(Ψ_Y − θΨ_T)] = 0

    Returns:
        (theta_hat, if_column)
    """
    denominator = float(np.mean(components.psi_x * components.psi_t))
    if not np.isfinite(denominator) or denominator <= 0.0:
        raise DegenerateDenominator(f"E_n[Ψ_X Ψ_T] = {denominator}，矩方程无解")
    theta = float(np.mean(components.psi_x * components.psi_y)) / denominator
    if_column = components.psi_x * (components.psi_y - theta * components.psi_t)
    return theta, if_column


class MomentContext:
    """
    按 (数据集, 冗余参数) 缓存指示变量和颗粒冗余参数列

    同一组交叉拟合预测贯穿所有行，嵌套的 Ψ_{Y,μ_t} 与外层共用。
    strict_cells=False 时空单元不报错（仅用于真实冗余参数的模拟）
    """

    def __init__(self, dataset: Dataset, nuisances: 'NuisanceEstimates',
                 denominator_floor: float = DENOMINATOR_FLOOR, strict_cells: bool = True):
        if nuisances.scheme is None:
            raise ConfigError("冗余参数缺少聚合方案，请先调用 fit_aggregates")
        if nuisances.e_hat.shape[0] != dataset.n:
            raise ConfigError(f"冗余参数行数 {nuisances.e_hat.shape[0]} 与样本量 {dataset.n} 不一致")
        self.dataset = dataset
        self.nuisances = nuisances
        self.scheme = nuisances.scheme
        self.denominator_floor = denominator_floor
        self.strict_cells = strict_cells
        self.ones = np.ones(dataset.n)
        self._cache: Dict[Hashable, np.ndarray] = {}
        self.memo: Dict[Hashable, Any] = {}

    def _cached(self, key: Hashable, factory: Callable[[], np.ndarray]) -> np.ndarray:
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]

    # ---- 指示变量 ----

    def ind_t(self, t: Label) -> np.ndarray:
        return self._cached(('1t', t), lambda: self.dataset.is_treatment(t).astype(float))

    def ind_a(self, arm: str) -> np.ndarray:
        return self._cached(('1a', arm), lambda: self.scheme.arm_indicator(self.dataset, arm).astype(float))

    def ind_g(self, group: Label) -> np.ndarray:
        return self._cached(('1g', group), lambda: self.scheme.group_indicator(self.dataset, group).astype(float))

    def ind_ag(self, arm: str, group: Label) -> np.ndarray:
        return self._cached(('1ag', arm, group), lambda: self.ind_a(arm) * self.ind_g(group))

    # ---- 颗粒冗余参数 ----

    def e_x(self, t: Label) -> np.ndarray:
        return self.nuisances.e(t)

    def mu_x(self, t: Label) -> np.ndarray:
        return self.nuisances.mu(t)

    def e_arm_x(self, arm: str) -> np.ndarray:
        """P(T∈T_a | X)"""
        return self._cached(('ea_x', arm),
                            lambda: np.sum([self.e_x(s) for s in self.scheme.arm_labels(arm)], axis=0))

    def e_ta_x(self, t: Label, arm: str) -> np.ndarray:
        """e_ta(X) = e_t(X) / P(T∈T_a | X)"""
        return self._cached(('eta_x', t, arm), lambda: self.e_x(t) / self.e_arm_x(arm))

    def m_a_x(self, arm: str) -> np.ndarray:
        """E[Y | T∈T_a, X] = Σ_t e_ta(X) μ_t(X)"""
        return self._cached(('ma_x', arm), lambda: np.sum(
            [self.e_ta_x(s, arm) * self.mu_x(s) for s in self.scheme.arm_labels(arm)], axis=0))

    def psi_mu(self, t: Label) -> np.ndarray:
        """Ψ_{Y,μ_t} = 1(T=t)(Y − μ_t(X))/e_t(X) + μ_t(X)"""
        def build():
            mu = self.mu_x(t)
            return self.ind_t(t) * (self.dataset.outcome - mu) / self.e_x(t) + mu
        return self._cached(('psi_mu', t), build)

    def psi_e_ta(self, t: Label, arm: str) -> np.ndarray:
        """Ψ_{Y,E[e_ta(X)|X_g]} = 1(T∈T_a)(1(T=t) − e_ta(X))/P(T∈T_a|X) + e_ta(X)"""
        def build():
            e_ta = self.e_ta_x(t, arm)
            return self.ind_a(arm) * (self.ind_t(t) - e_ta) / self.e_arm_x(arm) + e_ta
        return self._cached(('psi_eta', t, arm), build)

    def psi_adjusted(self, arm: str) -> np.ndarray:
        """1(T∈T_a)(Y − m_a(X))/P(T∈T_a|X) + m_a(X)"""
        def build():
            m = self.m_a_x(arm)
            return self.ind_a(arm) * (self.dataset.outcome - m) / self.e_arm_x(arm) + m
        return self._cached(('psi_adj', arm), build)

    # ---- 插入值 ----

    def plugin(self, name: str, t: Optional[Label] = None, arm: Optional[str] = None,
               group: Optional[Label] = None) -> float:
        key = AggregateKey.make(name, t, arm, group)
        value = self.nuisances.aggregate(key)
        if name in PROBABILITY_ROWS and value < self.denominator_floor:
            if value == 0.0:
                raise EmptyCell(f"{key} = 0，对应单元没有样本", label=str(key))
            raise DegenerateDenominator(f"插入概率 {key} = {value:.3g} 低于下限 {self.denominator_floor}",
                                        label=str(key))
        return value

    def require_cell(self, t: Label, group: Optional[Label] = None):
        if not self.strict_cells:
            return
        mask = self.ind_t(t) if group is None else self.ind_t(t) * self.ind_g(group)
        if not mask.any():
            where = f"(t={t}, {group})" if group is not None else f"(t={t})"
            raise EmptyCell(f"单元 {where} 没有样本", label=where)


def aggregate_components(key: AggregateKey, context: MomentContext) -> MomentComponents:
    """聚合冗余参数的 Ψ_X, Ψ_Y, Ψ_T"""
    name, t, arm, group = key
    ctx = context
    one = ctx.ones
    if name == 'e_a':
        return MomentComponents(one, ctx.ind_a(arm), one)
    if name == 'e_g':
        return MomentComponents(one, ctx.ind_g(group), one)
    if name == 'e_t':
        return MomentComponents(one, ctx.ind_t(t), one)
    if name == 'mu_t':
        return MomentComponents(one, ctx.psi_mu(t), one)
    if name == 'e_ag':
        return MomentComponents(one, ctx.ind_ag(arm, group), one)
    if name == 'e_ta':
        return MomentComponents(ctx.ind_a(arm) / ctx.plugin('e_a', arm=arm), ctx.ind_t(t), one)

    if name == 'm_a_g':
        return MomentComponents(ctx.ind_ag(arm, group) / ctx.plugin('e_ag', arm=arm, group=group),
                                ctx.dataset.outcome, one)
    if name == 'e_ta_g':
        return MomentComponents(ctx.ind_ag(arm, group) / ctx.plugin('e_ag', arm=arm, group=group),
                                ctx.ind_t(t), one)

    weight = ctx.ind_g(group) / ctx.plugin('e_g', group=group)
    if name == 'e_t_g':
        return MomentComponents(weight, ctx.ind_t(t), one)
    if name == 'mu_t_g':
        return MomentComponents(weight, ctx.psi_mu(t), one)
    if name == 'e_a_g':
        return MomentComponents(weight, ctx.ind_a(arm), one)
    if name == 'E_e_ta_g':
        return MomentComponents(weight, ctx.psi_e_ta(t, arm), one)
    raise ConfigError(f"未知的聚合冗余参数 '{name}'", label=name)


def aggregate_if(key: AggregateKey, dataset: Dataset, nuisances: 'NuisanceEstimates',
                 context: Optional[MomentContext] = None) -> np.ndarray:
    """聚合冗余参数在其已求解值处的影响函数列"""
    context = context or MomentContext(dataset, nuisances)
    if isinstance(key, str):
        key = AggregateKey.make(key)
    components = aggregate_components(key, context)
    theta = nuisances.aggregate(key)
    return components.psi_x * (components.psi_y - theta * components.psi_t)


def adjusted_mean_components(arm: str, group: Label, context: MomentContext) -> MomentComponents:
    """E[E[Y|T∈T_a, X] | X∈X_g] 的双稳健矩"""
    weight = context.ind_g(group) / context.plugin('e_g', group=group)
    return MomentComponents(weight, context.psi_adjusted(arm), context.ones)


def primitive_components(p: int, t: Label, arm: str, group: Label, dataset: Dataset,
                         nuisances: 'NuisanceEstimates',
                         context: Optional[MomentContext] = None) -> MomentComponents:
    """
    基本参数 θ_{a,g,t,p} 的 Ψ_X, Ψ_Y, Ψ_T

    Args:
        p: 基本参数编号 1..8
        t: 有效处理标签（属于 arm）
        arm: 聚合处理组
        group: 异质性分组（p=8 时不使用）
    """
    PrimitiveId(p, t, arm, group)
    ctx = context or MomentContext(dataset, nuisances)
    t = normalize_label(t)
    group = normalize_label(group)
    if t not in ctx.scheme.arm_labels(arm):
        raise ConfigError(f"处理标签 {t!r} 不属于处理组 '{arm}'", label=t)
    ctx.require_cell(t, None if p == 8 else group)

    one = ctx.ones
    ind_t = ctx.ind_t(t)
    psi_mu = ctx.psi_mu(t)

    if p == 8:
        weight_a = ctx.ind_a(arm) / ctx.plugin('e_a', arm=arm)
        return MomentComponents(
            one,
            weight_a * ind_t * ctx.plugin('mu_t', t=t) + ctx.plugin('e_ta', t=t, arm=arm) * psi_mu,
            weight_a + 1.0,
        )
    if p == 5:
        weight_ag = ctx.ind_ag(arm, group) / ctx.plugin('e_ag', arm=arm, group=group)
        return MomentComponents(
            one,
            weight_ag * ind_t * ctx.plugin('mu_t', t=t) + ctx.plugin('e_ta_g', t=t, arm=arm, group=group) * psi_mu,
            weight_ag + 1.0,
        )

    weight_g = ctx.ind_g(group) / ctx.plugin('e_g', group=group)
    if p == 4:
        weight_a = ctx.ind_a(arm) / ctx.plugin('e_a', arm=arm)
        return MomentComponents(
            one,
            weight_a * ind_t * ctx.plugin('mu_t_g', t=t, group=group)
            + ctx.plugin('e_ta', t=t, arm=arm) * weight_g * psi_mu,
            weight_a + weight_g,
        )
    if p == 1:
        share = ctx.plugin('e_a_g', arm=arm, group=group)
        return MomentComponents(
            weight_g,
            ctx.ind_a(arm) * ind_t / share * ctx.plugin('mu_t_g', t=t, group=group)
            + ctx.plugin('e_ta_g', t=t, arm=arm, group=group) * psi_mu,
            1.0 + ctx.ind_a(arm) / share,
        )
    if p == 2:
        return MomentComponents(
            weight_g,
            ctx.psi_e_ta(t, arm) * ctx.plugin('mu_t_g', t=t, group=group)
            + ctx.plugin('E_e_ta_g', t=t, arm=arm, group=group) * psi_mu,
            2.0 * one,
        )
    if p == 3:
        e_ta = ctx.e_ta_x(t, arm)
        return MomentComponents(
            weight_g,
            ctx.ind_a(arm) * (ind_t - e_ta) / ctx.e_arm_x(arm) * ctx.mu_x(t) + e_ta * psi_mu,
            one,
        )
    if p == 6:
        return MomentComponents(
            weight_g,
            ind_t * ctx.plugin('mu_t_g', t=t, group=group) + ctx.plugin('e_t_g', t=t, group=group) * psi_mu,
            2.0 * one,
        )
    # p == 7
    return MomentComponents(weight_g, ind_t * dataset.outcome, one)


def solve_primitive(primitive: PrimitiveId, dataset: Dataset, nuisances: 'NuisanceEstimates',
                    context: Optional[MomentContext] = None) -> Tuple[float, np.ndarray]:
    components = primitive_components(primitive.p, primitive.t, primitive.arm, primitive.group,
                                      dataset, nuisances, context)
    return solve_linear_moment(components)
