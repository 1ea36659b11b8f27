#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
冗余参数估计模块
K折交叉拟合颗粒冗余参数 e_t(x), μ_t(x)（可插拔学习器），
并通过影响函数矩求解全部标量聚合冗余参数
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .errors import (
    ConfigError, DegenerateDenominator, EmptyCell, HetDecompError, InvalidK,
    LabelAbsentInFold, LearnerFailure, UnknownTreatmentLabel,
)
from .model import AggregationScheme, Contrast, Dataset, Label, normalize_label
from .moments import (
    AGGREGATE_ROWS, BASE_ROWS, AggregateKey, MomentContext,
    aggregate_components, solve_linear_moment,
)

logger = logging.getLogger(__name__)

LEARNER_KINDS = (
    'cell-frequency',
    'regularized-multinomial',
    'per-treatment-ridge',
    'k-nearest-neighbor',
    'user-supplied',
)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """K折划分：fold_of[i] ∈ {1..K}"""
    fold_of: np.ndarray
    K: int
    seed: int

    def split(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """第 k 折的 (训练索引, 预测索引)"""
        test = self.fold_of == k
        return np.flatnonzero(~test), np.flatnonzero(test)

    def sizes(self) -> List[int]:
        return [int(np.sum(self.fold_of == k)) for k in range(1, self.K + 1)]


def assign_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """
    平衡随机分折，各折大小相差不超过1

    Args:
        n: 样本量
        K: 折数（>= 2 且 <= n）
        seed: 随机种子
    """
    if K < 2 or n < K:
        raise InvalidK(f"无效的折数 K={K}（n={n}）", label=K)
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(np.arange(n) % K + 1)
    return FoldAssignment(fold_of=fold_of, K=K, seed=seed)


@dataclass(frozen=True)
class LearnerSpec:
    """
    学习器描述

    user-supplied 学习器通过 fit(X, target, seed) -> model 与 predict(model, X) 回调接入：
    倾向得分学习器的 target 为处理编码、predict 返回 (m, |T|) 概率矩阵；
    结果学习器按处理分别调用，predict 返回长度 m 的预测
    """
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    fit: Optional[Callable] = None
    predict: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ConfigError(f"未知的学习器类型 '{self.kind}'，可选: {', '.join(LEARNER_KINDS)}",
                              label=self.kind)
        if self.kind == 'user-supplied' and (self.fit is None or self.predict is None):
            raise ConfigError("user-supplied 学习器需要同时提供 fit 和 predict 回调")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'LearnerSpec':
        data = dict(data or {})
        kind = data.pop('kind', 'cell-frequency')
        return cls(kind=kind, hyperparameters=data)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, **dict(self.hyperparameters)}


# ==========================================
# 学习器实现
# ==========================================

def _cell_keys(X: np.ndarray) -> pd.Series:
    # 字符串键，避免元组被 pandas 展开为 MultiIndex
    return pd.Series(["|".join(repr(float(v)) for v in row) for row in np.asarray(X).tolist()], dtype=object)


class CellFrequencyModel:
    """离散协变量单元上的频率/均值估计，训练中未见过的单元回退到边际值"""

    def __init__(self, n_labels: int):
        self.n_labels = n_labels
        self.table: Optional[pd.DataFrame] = None
        self.marginal: Optional[np.ndarray] = None
        self.fallbacks = 0

    def fit_propensity(self, X: np.ndarray, codes: np.ndarray) -> 'CellFrequencyModel':
        frame = pd.DataFrame({'cell': _cell_keys(X), 'code': codes})
        counts = pd.crosstab(frame['cell'], frame['code']).reindex(columns=range(self.n_labels), fill_value=0)
        self.table = counts.div(counts.sum(axis=1), axis=0)
        self.marginal = np.bincount(codes, minlength=self.n_labels) / len(codes)
        return self

    def fit_outcome(self, X: np.ndarray, y: np.ndarray) -> 'CellFrequencyModel':
        frame = pd.DataFrame({'cell': _cell_keys(X), 'y': y})
        self.table = frame.groupby('cell', sort=False)['y'].mean().to_frame()
        self.marginal = np.array([float(np.mean(y))])
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        values = self.table.reindex(_cell_keys(X)).to_numpy(dtype=float)
        missing = np.isnan(values).any(axis=1)
        if missing.any():
            self.fallbacks += int(missing.sum())
            values[missing] = self.marginal
        return values if values.shape[1] > 1 else values[:, 0]


def _fit_propensity(spec: LearnerSpec, X: np.ndarray, codes: np.ndarray, n_labels: int, seed: int):
    hp = dict(spec.hyperparameters)
    if spec.kind == 'cell-frequency' or X.shape[1] == 0:
        return CellFrequencyModel(n_labels).fit_propensity(X, codes)
    if spec.kind == 'regularized-multinomial':
        model = make_pipeline(
            StandardScaler(),
            LogisticRegression(C=float(hp.get('C', 1.0)), max_iter=int(hp.get('max_iter', 1000))),
        )
        return model.fit(X, codes)
    if spec.kind == 'k-nearest-neighbor':
        k = min(int(hp.get('n_neighbors', 50)), len(codes))
        return KNeighborsClassifier(n_neighbors=k).fit(X, codes)
    if spec.kind == 'user-supplied':
        return spec.fit(X, codes, seed)
    raise ConfigError(f"学习器 '{spec.kind}' 不能用于倾向得分", label=spec.kind)


def _predict_propensity(spec: LearnerSpec, model, X: np.ndarray, n_labels: int) -> np.ndarray:
    if isinstance(model, CellFrequencyModel):
        return model.predict(X).reshape(-1, n_labels)
    if spec.kind == 'user-supplied':
        return np.asarray(spec.predict(model, X), dtype=float)
    return np.asarray(model.predict_proba(X), dtype=float)


_OUTCOME_TEMPLATES = {
    'per-treatment-ridge': lambda hp: Ridge(alpha=float(hp.get('alpha', 1.0))),
    'k-nearest-neighbor': lambda hp: KNeighborsRegressor(n_neighbors=int(hp.get('n_neighbors', 50))),
}


def _fit_outcome(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int):
    hp = dict(spec.hyperparameters)
    if spec.kind == 'cell-frequency' or X.shape[1] == 0:
        return CellFrequencyModel(1).fit_outcome(X, y)
    if spec.kind == 'user-supplied':
        return spec.fit(X, y, seed)
    if spec.kind not in _OUTCOME_TEMPLATES:
        raise ConfigError(f"学习器 '{spec.kind}' 不能用于结果回归", label=spec.kind)
    model = clone(_OUTCOME_TEMPLATES[spec.kind](hp))
    if spec.kind == 'k-nearest-neighbor':
        model.set_params(n_neighbors=min(model.n_neighbors, len(y)))
    return model.fit(X, y)


def _predict_outcome(spec: LearnerSpec, model, X: np.ndarray) -> np.ndarray:
    if spec.kind == 'user-supplied' and not isinstance(model, CellFrequencyModel):
        return np.asarray(spec.predict(model, X), dtype=float).reshape(-1)
    return np.asarray(model.predict(X), dtype=float).reshape(-1)


# ==========================================
# 冗余参数容器
# ==========================================

@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """
    交叉拟合颗粒冗余参数与标量聚合冗余参数

    Attributes:
        labels: 处理标签字母表（e_hat/mu_hat 的列顺序）
        e_hat: (n, |T|) 倾向得分，行和为1，全部位于 (0, 1)
        mu_hat: (n, |T|) 结果回归
        aggregates: AggregateKey -> 标量
    """
    labels: Tuple[Label, ...]
    e_hat: np.ndarray
    mu_hat: np.ndarray
    clip_floor: float = 0.0
    clip_count: int = 0
    max_relative_adjustment: float = 0.0
    folds: Optional[FoldAssignment] = None
    aggregates: Mapping[AggregateKey, float] = field(default_factory=dict)
    scheme: Optional[AggregationScheme] = None
    performance_stats: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'labels', tuple(normalize_label(t) for t in self.labels))
        for name in ('e_hat', 'mu_hat'):
            value = np.array(getattr(self, name), dtype=float, copy=True)
            if value.ndim != 2 or value.shape[1] != len(self.labels):
                raise ConfigError(f"{name} 形状 {value.shape} 与标签数 {len(self.labels)} 不一致")
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        object.__setattr__(self, '_index', {t: k for k, t in enumerate(self.labels)})

    def column(self, t: Label) -> int:
        try:
            return self._index[normalize_label(t)]
        except KeyError:
            raise UnknownTreatmentLabel(f"冗余参数中没有处理标签 {t!r}", label=t) from None

    def e(self, t: Label) -> np.ndarray:
        return self.e_hat[:, self.column(t)]

    def mu(self, t: Label) -> np.ndarray:
        return self.mu_hat[:, self.column(t)]

    def aggregate(self, key, t: Optional[Label] = None, arm: Optional[str] = None,
                  group: Optional[Label] = None) -> float:
        if not isinstance(key, AggregateKey):
            key = AggregateKey.make(key, t, arm, group)
        try:
            return self.aggregates[key]
        except KeyError:
            raise EmptyCell(f"聚合冗余参数 {key} 未能估计（单元为空或未调用 fit_aggregates）",
                            label=str(key)) from None

    @property
    def complete(self) -> bool:
        return self.scheme is not None and bool(self.aggregates)

    def diagnostics(self) -> Dict[str, Any]:
        return {
            'clip_floor': self.clip_floor,
            'clip_count': self.clip_count,
            'max_relative_adjustment': self.max_relative_adjustment,
            'folds': None if self.folds is None else self.folds.K,
            'fold_seed': None if self.folds is None else self.folds.seed,
            'aggregates': len(self.aggregates),
        }


def clip_propensities(e_hat: np.ndarray, clip_floor: float) -> Tuple[np.ndarray, int, float]:
    """
    截断倾向得分，行和保持不变

    低于 clip_floor 的元素向 clip_floor 抬高，所需质量按各自余量从其余元素中扣除；
    每个元素扣除不超过 min(clip_floor, e − clip_floor)。余量不足时按比例少抬，
    因此任何元素的变化都不超过 clip_floor。

    Returns:
        (截断后矩阵, 被抬高的元素个数, 最大相对调整)
    """
    e_hat = np.asarray(e_hat, dtype=float)
    raised = e_hat < clip_floor
    deficit = np.where(raised, clip_floor - e_hat, 0.0)
    capacity = np.where(raised, 0.0, np.clip(e_hat - clip_floor, 0.0, clip_floor))
    need = deficit.sum(axis=1, keepdims=True)
    room = capacity.sum(axis=1, keepdims=True)
    moved = np.minimum(need, room)
    with np.errstate(divide='ignore', invalid='ignore'):
        lift = np.where(need > 0, moved / need, 0.0)
        take = np.where(room > 0, moved / room, 0.0)
    clipped = e_hat + deficit * lift - capacity * take
    short = int((clipped < clip_floor - 1e-12).sum())
    if short:
        logger.debug(f"{short} 个倾向得分因同行余量不足未能抬到截断下限 {clip_floor:g}")
    relative = np.abs(clipped - e_hat) / np.maximum(clipped, np.finfo(float).tiny)
    return clipped, int(raised.sum()), float(relative.max()) if relative.size else 0.0


def default_clip_floor(n: int) -> float:
    return max(1e-4, 1.0 / (2.0 * n))


def _fit_fold(k: int, folds: FoldAssignment, X: np.ndarray, y: np.ndarray, codes: np.ndarray,
              labels: Sequence[Label], propensity_learner: LearnerSpec,
              outcome_learner: LearnerSpec) -> Tuple[int, np.ndarray, np.ndarray, np.ndarray, float]:
    """拟合单折并预测其留出样本"""
    start_time = time.time()
    train, test = folds.split(k)
    n_labels = len(labels)
    present = np.bincount(codes[train], minlength=n_labels)
    absent = np.flatnonzero(present == 0)
    if absent.size:
        label = labels[int(absent[0])]
        raise LabelAbsentInFold(f"处理标签 {label!r} 未出现在第 {k} 折的训练样本中", label=label)

    seed = int(np.random.SeedSequence([folds.seed, k]).generate_state(1)[0])
    try:
        model = _fit_propensity(propensity_learner, X[train], codes[train], n_labels, seed)
        e_fold = _predict_propensity(propensity_learner, model, X[test], n_labels)
        mu_fold = np.empty((test.size, n_labels))
        for j in range(n_labels):
            rows = train[codes[train] == j]
            outcome_model = _fit_outcome(outcome_learner, X[rows], y[rows], seed)
            mu_fold[:, j] = _predict_outcome(outcome_learner, outcome_model, X[test])
    except HetDecompError:
        raise
    except Exception as exc:
        raise LearnerFailure(f"第 {k} 折学习器拟合失败: {exc}") from exc

    if e_fold.shape != (test.size, n_labels):
        raise LearnerFailure(f"倾向得分预测形状 {e_fold.shape} 应为 {(test.size, n_labels)}")
    if not np.allclose(e_fold.sum(axis=1), 1.0, atol=1e-8) or (e_fold < 0).any():
        raise LearnerFailure(f"第 {k} 折倾向得分预测不是概率向量")
    return k, test, e_fold, mu_fold, time.time() - start_time


def fit_granular(dataset: Dataset, folds: FoldAssignment, propensity_learner: LearnerSpec,
                 outcome_learner: LearnerSpec, labels: Optional[Sequence[Label]] = None,
                 clip_floor: Optional[float] = None, max_workers: int = 1) -> NuisanceEstimates:
    """
    K折交叉拟合 ê_t(x) 与 μ̂_t(x)

    第 i 行的预测来自未使用 fold_of(i) 训练的模型；倾向得分截断于 clip_floor 后重新归一化

    Args:
        dataset: 离散处理数据集
        folds: 分折
        propensity_learner: 倾向得分学习器
        outcome_learner: 结果学习器
        labels: 处理字母表，默认取数据中的标签
        clip_floor: 截断下限，默认 max(1e-4, 1/(2n))
        max_workers: 并行折数

    Returns:
        只含颗粒部分的 NuisanceEstimates
    """
    start_time = time.time()
    labels = tuple(labels) if labels is not None else dataset.labels
    codes = dataset.treatment_codes(labels)
    n_labels = len(labels)
    e_raw = np.empty((dataset.n, n_labels))
    mu_hat = np.empty((dataset.n, n_labels))
    fold_times: Dict[int, float] = {}

    args = (folds, dataset.covariates, dataset.outcome, codes, labels, propensity_learner, outcome_learner)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(_fit_fold, k, *args) for k in range(1, folds.K + 1)]
            results = [future.result() for future in as_completed(futures)]
    else:
        results = [_fit_fold(k, *args) for k in range(1, folds.K + 1)]

    # 按折序合并
    for k, test, e_fold, mu_fold, seconds in sorted(results, key=lambda r: r[0]):
        e_raw[test] = e_fold
        mu_hat[test] = mu_fold
        fold_times[k] = seconds
        logger.debug(f"第 {k} 折拟合完成，留出 {test.size} 个样本，耗时 {seconds:.2f}秒")

    floor = clip_floor if clip_floor is not None else default_clip_floor(dataset.n)
    e_hat, clip_count, adjustment = clip_propensities(e_raw, floor)
    if clip_count:
        logger.warning(f"倾向得分截断 {clip_count} 个元素（下限 {floor:.2e}，最大相对调整 {adjustment:.3g}）")

    return NuisanceEstimates(
        labels=labels,
        e_hat=e_hat,
        mu_hat=mu_hat,
        clip_floor=floor,
        clip_count=clip_count,
        max_relative_adjustment=adjustment,
        folds=folds,
        performance_stats={
            'fit_seconds': time.time() - start_time,
            'fold_seconds': fold_times,
            'propensity_learner': propensity_learner.kind,
            'outcome_learner': outcome_learner.kind,
        },
    )


def _aggregate_keys(dataset: Dataset, scheme: AggregationScheme, labels: Sequence[Label],
                    contrast: Optional[Contrast]) -> List[AggregateKey]:
    arms = list(contrast.arms) if contrast is not None else list(scheme.arms)
    groups = list(contrast.groups) if contrast is not None else list(scheme.groups.group_labels(dataset))
    keys = []
    for name, (need_t, need_arm, need_group) in AGGREGATE_ROWS.items():
        if need_arm:
            pairs = [(t, arm) for arm in arms for t in (scheme.arm_labels(arm) if need_t else [None])]
        else:
            pairs = [(t, None) for t in (labels if need_t else [None])]
        for t, arm in pairs:
            for group in (groups if need_group else [None]):
                keys.append(AggregateKey.make(name, t, arm, group))
    return list(dict.fromkeys(keys))


def fit_aggregates(dataset: Dataset, scheme: AggregationScheme, granular: NuisanceEstimates,
                   contrast: Optional[Contrast] = None) -> NuisanceEstimates:
    """
    求解全部聚合冗余参数的经验矩方程

    给定 contrast 时只估计其处理组/分组所需的值并对空单元报错；
    否则估计方案中全部组合，无法估计的组合记录警告后跳过

    Returns:
        完整的 NuisanceEstimates
    """
    partial = replace(granular, scheme=scheme, aggregates={})
    keys = _aggregate_keys(dataset, scheme, granular.labels, contrast)
    strict = contrast is not None
    solved: Dict[AggregateKey, float] = {}
    skipped = []

    for stage in ('base', 'weighted'):
        context = MomentContext(dataset, partial)
        for key in keys:
            if (key.name in BASE_ROWS) != (stage == 'base'):
                continue
            try:
                theta, _ = solve_linear_moment(aggregate_components(key, context))
            except (EmptyCell, DegenerateDenominator) as exc:
                if strict:
                    raise
                skipped.append(str(key))
                logger.debug(f"跳过聚合冗余参数 {key}: {exc.message}")
                continue
            solved[key] = theta
        partial = replace(partial, aggregates=dict(solved))

    if skipped:
        logger.warning(f"{len(skipped)} 个聚合冗余参数因空单元未估计")
    return partial
