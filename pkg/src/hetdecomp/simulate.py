#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
蒙特卡洛模拟模块
数据生成过程抽样、有限样本功效、覆盖率与连续处理分箱偏差研究
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import integrate, stats

from .decomp import InfluenceMatrix, ParameterId, decompose, estimate_baseline, estimate_Delta, infer
from .errors import ConfigError, EstimationError, InvalidPreset, QuadratureFailure
from .model import (
    AggregationScheme, ColumnGroups, Contrast, Dataset, PartitionScheme, atom_label, bin_label, discretize,
)
from .moments import MomentContext
from .nuisance import LearnerSpec, assign_folds, fit_aggregates, fit_granular
from .oracle import DiscreteDgp, population_decomposition, targeting_dgp, true_nuisances
from .testing import METHODS, PowerSpec, analytic_power, strong_null_contrasts, supremum_test, wald_test, z_test

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 2 ** 14
J_GRID = (2, 4, 8, 16, 32, 64)
JSTAR_GRID = (2, 4, 8, 16, 32)


def replication_rng(seed: int, replication: int, *extra: int) -> np.random.Generator:
    """每次重复的独立随机流，与线程数无关"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replication), *map(int, extra)]))


# ==========================================
# 数据生成过程
# ==========================================

@dataclass(frozen=True)
class PowerSimDgp:
    """
    功效模拟设计：T∈{0,..,J}，P(T=0)=1/2，P(T=j)=1/(2J)，X ~ Bernoulli(1/2)，G = X，
    μ0 = 0，μ_j(1) = (j−1)/(J−1)，μ_j(0) = μ_j(1) − ξ_j，ξ_j = c（j ≤ round(J^a)），误差 N(0, σ²)
    """
    J: int
    a: float = 1.0
    c: float = 0.4
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.J < 1:
            raise ConfigError(f"处理版本数 J 必须 >= 1，当前为 {self.J}", label=self.J)

    @property
    def xi(self) -> np.ndarray:
        active = int(round(self.J ** self.a))
        return np.asarray([self.c if j <= active else 0.0 for j in range(1, self.J + 1)])

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(range(self.J + 1))

    @property
    def contrast(self) -> Contrast:
        return Contrast('treated', 'control', 1, 0)

    def mu(self, j: int, x: int) -> float:
        if j == 0:
            return 0.0
        level = (j - 1) / (self.J - 1) if self.J > 1 else 0.0
        return level if x == 1 else level - float(self.xi[j - 1])

    def to_discrete(self) -> DiscreteDgp:
        e_row = (0.5,) + (1.0 / (2 * self.J),) * self.J
        return DiscreteDgp(
            points=((0.0,), (1.0,)),
            probabilities=(0.5, 0.5),
            labels=self.labels,
            propensities=(e_row, e_row),
            outcome_means=tuple(tuple(self.mu(j, x) for j in self.labels) for x in (0, 1)),
            scheme=AggregationScheme(arms={'treated': self.labels[1:], 'control': (0,)},
                                     groups=ColumnGroups('x')),
            contrast=self.contrast,
            noise_sd=self.noise_sd,
            covariate_names=('x',),
        )

    def delta1_standard_error(self, n: int) -> float:
        """已知冗余参数下 Δ̂1 在原假设处的标准误"""
        e_treated = 1.0 / (2 * self.J)
        weights = np.full(self.J, 1.0 / self.J)
        group_factor = 1.0 / 0.5 + 1.0 / 0.5
        variance = group_factor * (float(np.sum(weights ** 2)) / e_treated + 1.0 / 0.5)
        return self.noise_sd * math.sqrt(variance / n)

    def power_spec(self, n: int, alpha: float = 0.05) -> PowerSpec:
        """以 Δ̂1 标准误标准化的局部备择"""
        return PowerSpec(xi=tuple(self.xi / self.delta1_standard_error(n)),
                         e_ta=(1.0 / self.J,) * self.J, alpha=alpha)


@dataclass(frozen=True)
class ContinuousDgp:
    """
    连续剂量设计：X ~ Bernoulli(1/2)，剂量密度 f(t|x) = 1 + b_x(2t − 1)，t∈[0, 1]，
    可选原子点 atom（P(T = atom | X = x) = atom_probabilities[x]）

    Attributes:
        outcome: 'smooth' 时 μ(t, x) = sin(πt) + x·t²；'constant' 时 μ(t, x) = x
        smoothness: 结果函数的光滑阶 q（仅描述）
    """
    slopes: Tuple[float, float] = (0.5, -0.5)
    atom: Optional[float] = None
    atom_probabilities: Tuple[float, float] = (0.0, 0.0)
    outcome: str = 'smooth'
    smoothness: int = 2
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.outcome not in ('smooth', 'constant'):
            raise ConfigError(f"未知的结果函数 '{self.outcome}'", label=self.outcome)
        if any(abs(b) > 1.0 for b in self.slopes):
            raise ConfigError("密度斜率必须满足 |b| <= 1")
        if self.atom is None and any(self.atom_probabilities):
            raise ConfigError("未指定原子点时 atom_probabilities 必须为0")

    @property
    def atoms(self) -> Tuple[float, ...]:
        return () if self.atom is None else (float(self.atom),)

    def density(self, t: np.ndarray, x: int) -> np.ndarray:
        return 1.0 + self.slopes[x] * (2.0 * np.asarray(t, dtype=float) - 1.0)

    def mu(self, t: np.ndarray, x: Union[int, np.ndarray]) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.outcome == 'constant':
            return np.zeros_like(t) + x
        return np.sin(np.pi * t) + x * t ** 2

    def _inverse_cdf(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        b = np.asarray(self.slopes, dtype=float)[x]
        safe = np.where(np.abs(b) < 1e-12, 1.0, b)
        root = (-(1.0 - b) + np.sqrt((1.0 - b) ** 2 + 4.0 * b * u)) / (2.0 * safe)
        return np.where(np.abs(b) < 1e-12, u, root)

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        x = rng.integers(0, 2, size=n)
        doses = self._inverse_cdf(rng.random(n), x)
        if self.atom is not None:
            at_atom = rng.random(n) < np.asarray(self.atom_probabilities)[x]
            doses = np.where(at_atom, float(self.atom), doses)
        y = self.mu(doses, x) + self.noise_sd * rng.standard_normal(n)
        return Dataset(outcome=y, treatment=doses, covariates=x.astype(float),
                       covariate_names=('x',), continuous=True)

    # ---- 数值积分真值 ----

    def _integrate(self, values: np.ndarray, grid: np.ndarray) -> float:
        return float(integrate.simpson(values, x=grid))

    def check_density(self, nodes: int = QUADRATURE_NODES) -> float:
        """各 x 下连续部分密度积分与1的最大偏差，超过 1e-6 报错"""
        grid = np.linspace(0.0, 1.0, nodes + 1)
        worst = max(abs(self._integrate(self.density(grid, x), grid) - 1.0) for x in (0, 1))
        if worst > 1e-6:
            raise QuadratureFailure(f"剂量密度积分偏差 {worst:.3g} 超过 1e-6")
        return worst

    def true_d0(self, nodes: int = QUADRATURE_NODES) -> float:
        """
        连续目标 d0* = ∫ f(t) E_X[μ(t, X)] dt（含原子点），
        f 为剂量的边际分布
        """
        self.check_density(nodes)
        grid = np.linspace(0.0, 1.0, nodes + 1)
        continuous_mass = [0.5 * (1.0 - self.atom_probabilities[x]) for x in (0, 1)]
        marginal = sum(continuous_mass[x] * self.density(grid, x) for x in (0, 1))
        population_mu = 0.5 * (self.mu(grid, 0) + self.mu(grid, 1))
        value = self._integrate(marginal * population_mu, grid)
        if self.atom is not None:
            p_atom = 0.5 * sum(self.atom_probabilities)
            value += p_atom * 0.5 * float(self.mu(self.atom, 0) + self.mu(self.atom, 1))
        return value

    def partition_oracle(self, partition: PartitionScheme, nodes: int = QUADRATURE_NODES) -> Dict[str, Tuple[float, float]]:
        """
        分箱后的离散化参数：label -> (e_t, μ_t)，
        μ_t = E_X[E[Y | T∈bin, X]]；外侧边界延伸至支撑 [0, 1]
        """
        self.check_density(nodes)
        edges = np.asarray(partition.bin_edges, dtype=float).copy()
        edges[0], edges[-1] = min(edges[0], 0.0), max(edges[-1], 1.0)
        per_bin = max(2 * ((nodes // partition.J) // 2), 2)
        out: Dict[str, Tuple[float, float]] = {}
        for j in range(partition.J):
            grid = np.linspace(max(edges[j], 0.0), min(edges[j + 1], 1.0), per_bin + 1)
            mass, conditional = 0.0, 0.0
            for x in (0, 1):
                weight = 0.5 * (1.0 - self.atom_probabilities[x])
                density = self.density(grid, x)
                bin_mass = self._integrate(density, grid)
                if bin_mass <= 0.0:
                    raise QuadratureFailure(f"分箱 {bin_label(j)} 在 x={x} 下的概率为0", label=bin_label(j))
                mass += weight * bin_mass
                conditional += 0.5 * self._integrate(density * self.mu(grid, x), grid) / bin_mass
            out[bin_label(j)] = (mass, conditional)
        if self.atom is not None:
            out[atom_label(self.atom)] = (0.5 * sum(self.atom_probabilities),
                                          0.5 * float(self.mu(self.atom, 0) + self.mu(self.atom, 1)))
        return out

    def partition_d0(self, partition: PartitionScheme, nodes: int = QUADRATURE_NODES) -> float:
        return math.fsum(e * mu for e, mu in self.partition_oracle(partition, nodes).values())


Dgp = Union[DiscreteDgp, PowerSimDgp, ContinuousDgp]


def _sample_discrete(dgp: DiscreteDgp, n: int, rng: np.random.Generator) -> Dataset:
    probabilities = np.asarray([float(p) for p in dgp.probabilities])
    cells = rng.choice(len(dgp.points), size=n, p=probabilities / probabilities.sum())
    e_table = np.asarray([[float(v) for v in row] for row in dgp.propensities])
    mu_table = np.asarray([[float(v) for v in row] for row in dgp.outcome_means])
    cumulative = np.cumsum(e_table[cells], axis=1)
    codes = np.minimum((rng.random(n)[:, None] > cumulative).sum(axis=1), len(dgp.labels) - 1)
    y = mu_table[cells, codes] + dgp.noise_sd * rng.standard_normal(n)
    return Dataset(
        outcome=y,
        treatment=[dgp.labels[k] for k in codes],
        covariates=np.asarray(dgp.points, dtype=float)[cells],
        covariate_names=dgp.covariate_names,
    )


def sample(dgp: Dgp, n: int, seed: Union[int, np.random.Generator]) -> Dataset:
    """从数据生成过程独立抽取 n 个样本；给定种子时结果确定"""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(dgp, PowerSimDgp):
        return _sample_discrete(dgp.to_discrete(), n, rng)
    if isinstance(dgp, DiscreteDgp):
        return _sample_discrete(dgp, n, rng)
    if isinstance(dgp, ContinuousDgp):
        return dgp.sample(n, rng)
    raise ConfigError(f"不支持的数据生成过程类型 {type(dgp).__name__}")


# ==========================================
# 研究配置与预设
# ==========================================

@dataclass(frozen=True)
class PowerDesign:
    """功效研究中的一种备择设计"""
    name: str
    a: float
    c: float


@dataclass(frozen=True)
class StudyConfig:
    """
    模拟研究配置

    Attributes:
        replications: 重复次数
        n: 每次重复的样本量
        seed: 主种子
        grid: J 或 J* 网格
        nuisance: 'oracle' 使用真实冗余参数，'cross-fit' 使用交叉拟合
        n_jobs: joblib 并行任务数
    """
    replications: int
    n: int
    seed: int
    grid: Tuple[int, ...] = J_GRID
    alpha: float = 0.05
    folds: int = 5
    nuisance: str = 'oracle'
    propensity_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec('cell-frequency'))
    outcome_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec('cell-frequency'))
    n_jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"重复次数必须 >= 1，当前为 {self.replications}", label=self.replications)
        if self.n < 2:
            raise ConfigError(f"样本量必须 >= 2，当前为 {self.n}", label=self.n)
        if self.nuisance not in ('oracle', 'cross-fit'):
            raise ConfigError(f"未知的冗余参数模式 '{self.nuisance}'", label=self.nuisance)
        object.__setattr__(self, 'grid', tuple(int(v) for v in self.grid))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'replications': self.replications,
            'n': self.n,
            'seed': self.seed,
            'grid': list(self.grid),
            'alpha': self.alpha,
            'folds': self.folds,
            'nuisance': self.nuisance,
            'propensity_learner': self.propensity_learner.to_dict(),
            'outcome_learner': self.outcome_learner.to_dict(),
            'n_jobs': self.n_jobs,
        }


DENSE = PowerDesign('dense', a=1.0, c=0.4)
SPARSE = PowerDesign('sparse', a=0.5, c=0.5)
NULL = PowerDesign('null', a=1.0, c=0.0)

PRESETS: Dict[str, Dict[str, Any]] = {
    'figure2-dense': {
        'kind': 'power', 'designs': (DENSE, NULL),
        'config': {'replications': 2000, 'n': 1000, 'grid': J_GRID},
    },
    'figure2-sparse': {
        'kind': 'power', 'designs': (SPARSE, NULL),
        'config': {'replications': 2000, 'n': 1000, 'grid': J_GRID},
    },
    'figure2-dense-full': {
        'kind': 'power', 'designs': (DENSE, NULL),
        'config': {'replications': 10000, 'n': 1000, 'grid': J_GRID},
    },
    'figure2-sparse-full': {
        'kind': 'power', 'designs': (SPARSE, NULL),
        'config': {'replications': 10000, 'n': 1000, 'grid': J_GRID},
    },
    'coverage-null': {
        'kind': 'coverage', 'dgp': PowerSimDgp(J=4, c=0.0), 'parameter': 'Delta1',
        'config': {'replications': 1000, 'n': 2000, 'grid': (4,)},
    },
    'coverage-targeting': {
        'kind': 'coverage', 'dgp': targeting_dgp(), 'parameter': 'Delta2',
        'config': {'replications': 1000, 'n': 2000, 'grid': (2,)},
    },
    'partition-smooth': {
        'kind': 'partition', 'dgp': ContinuousDgp(),
        'config': {'replications': 20, 'n': 100000, 'grid': JSTAR_GRID, 'nuisance': 'cross-fit'},
    },
    'partition-atom': {
        'kind': 'partition', 'dgp': ContinuousDgp(atom=0.0, atom_probabilities=(0.2, 0.3)),
        'config': {'replications': 20, 'n': 100000, 'grid': JSTAR_GRID, 'nuisance': 'cross-fit'},
    },
}


PRESET_ALIASES: Dict[str, str] = {
    'power-dense': 'figure2-dense',
    'power-sparse': 'figure2-sparse',
    'power-dense-full': 'figure2-dense-full',
    'power-sparse-full': 'figure2-sparse-full',
}


def preset_names() -> List[str]:
    return sorted(PRESETS) + sorted(PRESET_ALIASES)


def get_preset(name: str) -> Dict[str, Any]:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise InvalidPreset(f"未知的预设 '{name}'，可选: {', '.join(preset_names())}", label=name)
    return dict(PRESETS[key])


def study_config_for(name: str, seed: int, **overrides) -> StudyConfig:
    """预设的研究配置；overrides 中值为 None 的项忽略"""
    settings = dict(get_preset(name)['config'])
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig(seed=seed, **settings)


def parameter_for(name: Union[str, ParameterId], contrast: Contrast) -> ParameterId:
    """
    短名称解析：'Delta1'、'delta2'（第一个分组）、'd0'、'DiM'、'ADiM'
    """
    if isinstance(name, ParameterId):
        return name
    if name in ('DiM', 'ADiM'):
        return ParameterId(name, 'plain', contrast.arms, contrast.groups)
    for level in ('Delta', 'delta', 'd', 's'):
        if name.startswith(level) and name[len(level):]:
            index = name[len(level):]
            if level == 'Delta':
                return ParameterId(level, index, contrast.arms, contrast.groups)
            if level == 'delta':
                return ParameterId(level, index, contrast.arms, () if index == "0" else (contrast.group,))
            return ParameterId(level, index, (contrast.arm,), () if index == "0" else (contrast.group,))
    raise ConfigError(f"无法解析参数名 '{name}'", label=name)


# ==========================================
# 单次重复
# ==========================================

def _nuisances(dgp: DiscreteDgp, dataset: Dataset, contrast: Contrast, config: StudyConfig,
               rng: np.random.Generator):
    if config.nuisance == 'oracle':
        granular = true_nuisances(dgp, dataset)
    else:
        folds = assign_folds(dataset.n, config.folds, int(rng.integers(2 ** 31 - 1)))
        granular = fit_granular(dataset, folds, config.propensity_learner, config.outcome_learner,
                                labels=dgp.labels)
    return fit_aggregates(dataset, dgp.scheme, granular, contrast)


def _power_replication(J: int, design: PowerDesign, config: StudyConfig, replication: int) -> Optional[Dict[str, bool]]:
    rng = replication_rng(config.seed, replication, J)
    dgp = PowerSimDgp(J=J, a=design.a, c=design.c)
    discrete = dgp.to_discrete()
    dataset = _sample_discrete(discrete, config.n, rng)
    contrast = dgp.contrast
    try:
        nuisances = _nuisances(discrete, dataset, contrast, config, rng)
        contrasts = strong_null_contrasts(contrast, dataset, nuisances, strict_cells=False)
        context = MomentContext(dataset, nuisances, strict_cells=False)
        delta1 = estimate_Delta(contrast, dataset, nuisances, context)["1"]
        inference = infer({delta1.parameter.name: 1.0}, InfluenceMatrix([delta1]))
        results = {
            'wald': wald_test(contrasts.estimates, contrasts.covariance, config.alpha),
            'supremum': supremum_test(contrasts.estimates, contrasts.scales, config.alpha),
            'delta1': z_test(inference.z, config.alpha),
        }
    except EstimationError as exc:
        logger.debug(f"J={J} 第 {replication} 次重复失败: {exc}")
        return None
    return {method: result.reject for method, result in results.items()}


def _coverage_replication(dgp: DiscreteDgp, parameter: ParameterId, truth: float, contrast: Contrast,
                          config: StudyConfig, replication: int) -> Optional[Tuple[float, float]]:
    rng = replication_rng(config.seed, replication)
    dataset = _sample_discrete(dgp, config.n, rng)
    try:
        nuisances = _nuisances(dgp, dataset, contrast, config, rng)
        report = decompose(dataset, contrast, nuisances, config.alpha,
                           strict_cells=config.nuisance != 'oracle')
        row = report.row(parameter)
    except EstimationError as exc:
        logger.debug(f"第 {replication} 次重复失败: {exc}")
        return None
    if bool(row['degenerate']):
        return None
    return float(row['estimate']), float(row['se'])


def _partition_replication(dgp: ContinuousDgp, J: int, config: StudyConfig, replication: int,
                           target: float) -> Optional[Dict[str, float]]:
    rng = replication_rng(config.seed, replication, J)
    raw = dgp.sample(config.n, rng)
    partition = PartitionScheme.equal_mass(raw.treatment, J, dgp.atoms)
    dataset = discretize(raw, partition)
    scheme = AggregationScheme(arms={'dose': partition.labels}, groups=ColumnGroups('x'))
    gap_target = dgp.partition_d0(partition)
    try:
        folds = assign_folds(dataset.n, config.folds, int(rng.integers(2 ** 31 - 1)))
        granular = fit_granular(dataset, folds, config.propensity_learner, config.outcome_learner,
                                labels=partition.labels)
        nuisances = fit_aggregates(dataset, scheme, granular)
        estimate = estimate_baseline('dose', dataset, nuisances).value
    except EstimationError as exc:
        logger.debug(f"J*={J} 第 {replication} 次重复失败: {exc}")
        return None
    return {
        'abs_error': abs(estimate - target),
        'quadrature_gap': abs(target - gap_target),
        'estimation_error': abs(estimate - gap_target),
        'J_effective': partition.J,
    }


# ==========================================
# 研究
# ==========================================

class StudyRunner:
    """模拟研究执行器，按重复序合并结果"""

    def __init__(self, config: StudyConfig):
        self.config = config
        self.performance_stats = {
            'replications': 0,
            'failures': 0,
            'wall_seconds': 0.0,
        }

    def _run(self, function, *args) -> List[Any]:
        start_time = time.time()
        results = Parallel(n_jobs=self.config.n_jobs)(
            delayed(function)(*args, replication) for replication in range(self.config.replications)
        )
        self.performance_stats['replications'] += len(results)
        self.performance_stats['failures'] += sum(r is None for r in results)
        self.performance_stats['wall_seconds'] += time.time() - start_time
        return results

    def get_performance_stats(self) -> Dict[str, Any]:
        return dict(self.performance_stats)

    def power_study(self, designs: Sequence[PowerDesign] = (DENSE, SPARSE)) -> pd.DataFrame:
        """
        各 (设计, J, 方法) 的拒绝率、蒙特卡洛标准误及解析功效

        Returns:
            列 design, J, method, power, mc_se, analytic_power, replications, failures
        """
        rows = []
        for design in designs:
            for J in self.config.grid:
                logger.info(f"功效研究: 设计 {design.name}, J={J}, {self.config.replications} 次重复")
                results = self._run(_power_replication, J, design, self.config)
                done = [r for r in results if r is not None]
                analytic = analytic_power(PowerSimDgp(J=J, a=design.a, c=design.c)
                                          .power_spec(self.config.n, self.config.alpha))
                for method in METHODS:
                    rate = float(np.mean([r[method] for r in done])) if done else float('nan')
                    rows.append({
                        'design': design.name,
                        'J': J,
                        'method': method,
                        'power': rate,
                        'mc_se': math.sqrt(rate * (1.0 - rate) / len(done)) if done else float('nan'),
                        'analytic_power': analytic[method],
                        'replications': len(done),
                        'failures': len(results) - len(done),
                    })
        return pd.DataFrame(rows)

    def coverage_study(self, dgp: Union[DiscreteDgp, PowerSimDgp], parameter: Union[str, ParameterId] = 'Delta1'
                       ) -> Dict[str, Any]:
        """
        置信区间覆盖率（真值由总体真值模块给出），附 t 统计量对 N(0,1) 的 KS 检验
        """
        discrete = dgp.to_discrete() if isinstance(dgp, PowerSimDgp) else dgp
        contrast = discrete.contrast
        if contrast is None:
            raise ConfigError("覆盖率研究需要数据生成过程带有对比")
        parameter = parameter_for(parameter, contrast)
        truth = float(population_decomposition(discrete, contrast)[parameter])
        logger.info(f"覆盖率研究: {parameter.name}，真值 {truth:.6g}，{self.config.replications} 次重复")

        results = self._run(_coverage_replication, discrete, parameter, truth, contrast, self.config)
        done = np.asarray([r for r in results if r is not None], dtype=float).reshape(-1, 2)
        z_crit = stats.norm.ppf(1.0 - self.config.alpha / 2.0)
        t_stats = (done[:, 0] - truth) / done[:, 1] if done.size else np.empty(0)
        covered = np.abs(t_stats) <= z_crit
        coverage = float(np.mean(covered)) if covered.size else float('nan')
        ks = stats.kstest(t_stats, 'norm') if t_stats.size else None
        return {
            'parameter': parameter.name,
            'truth': truth,
            'coverage': coverage,
            'mc_se': math.sqrt(coverage * (1.0 - coverage) / covered.size) if covered.size else float('nan'),
            'mean_estimate': float(np.mean(done[:, 0])) if done.size else float('nan'),
            'mean_se': float(np.mean(done[:, 1])) if done.size else float('nan'),
            'sd_estimate': float(np.std(done[:, 0], ddof=1)) if len(done) > 1 else float('nan'),
            'ks_statistic': float(ks.statistic) if ks is not None else float('nan'),
            'ks_pvalue': float(ks.pvalue) if ks is not None else float('nan'),
            'replications': int(covered.size),
            'failures': len(results) - int(covered.size),
        }

    def partition_study(self, dgp: ContinuousDgp, grid: Optional[Sequence[int]] = None) -> pd.DataFrame:
        """
        各 J* 的离散化偏差

        Returns:
            列 J, abs_error（|d̂0 − d0| 的重复均值）, quadrature_gap（数值积分的确定性差距
            |d0^J* − d0|）, estimation_error（|d̂0 − d0^J*|）, J_effective, replications, failures。
            attrs['slope'] 为 log(quadrature_gap) 对 log(J*) 的斜率，attrs['error_slope'] 为
            log(abs_error) 的斜率
        """
        grid = tuple(grid or self.config.grid)
        target = dgp.true_d0()
        columns = ('abs_error', 'quadrature_gap', 'estimation_error', 'J_effective')
        rows = []
        for J in grid:
            logger.info(f"分箱研究: J*={J}, n={self.config.n}, {self.config.replications} 次重复")
            results = self._run(_partition_replication, dgp, J, self.config, target)
            done = [r for r in results if r is not None]
            row = {'J': J}
            for column in columns:
                row[column] = float(np.mean([r[column] for r in done])) if done else float('nan')
            row['replications'] = len(done)
            row['failures'] = len(results) - len(done)
            rows.append(row)
        table = pd.DataFrame(rows)
        table.attrs['target'] = target
        table.attrs['slope'] = gap_slope(table)
        table.attrs['error_slope'] = gap_slope(table, 'abs_error')
        return table


def gap_slope(table: pd.DataFrame, column: str = 'quadrature_gap') -> float:
    """log(column) 对 log(J*) 的最小二乘斜率；可用点少于两个时返回 nan"""
    usable = table[(table[column] > 0) & np.isfinite(table[column])]
    if len(usable) < 2:
        return float('nan')
    slope, _ = np.polyfit(np.log(usable['J'].astype(float)), np.log(usable[column]), 1)
    return float(slope)


def analytic_power_table(designs: Sequence[PowerDesign], grid: Sequence[int], n: int,
                         alpha: float = 0.05) -> pd.DataFrame:
    """解析功效曲线 (design, J, method, analytic_power)"""
    rows = []
    for design in designs:
        for J in grid:
            powers = analytic_power(PowerSimDgp(J=J, a=design.a, c=design.c).power_spec(n, alpha))
            for method in METHODS:
                rows.append({'design': design.name, 'J': J, 'method': method, 'analytic_power': powers[method]})
    return pd.DataFrame(rows)


def power_study(config: StudyConfig, designs: Sequence[PowerDesign] = (DENSE, SPARSE)) -> pd.DataFrame:
    return StudyRunner(config).power_study(designs)


def coverage_study(config: StudyConfig, dgp: Union[DiscreteDgp, PowerSimDgp],
                   parameter: Union[str, ParameterId] = 'Delta1') -> Dict[str, Any]:
    return StudyRunner(config).coverage_study(dgp, parameter)


def partition_study(config: StudyConfig, continuous_dgp: ContinuousDgp,
                    Jstar_grid: Optional[Sequence[int]] = None) -> pd.DataFrame:
    return StudyRunner(config).partition_study(continuous_dgp, Jstar_grid)
