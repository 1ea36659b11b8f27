#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
运行配置模块
估计参数、YAML 运行配置及命令行覆盖
"""

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .model import (
    AggregationScheme, ColumnGroups, Contrast, DataBindings, Dataset, GroupRule,
    PartitionScheme, ThresholdGroups,
)
from .moments import DENOMINATOR_FLOOR
from .nuisance import LearnerSpec, default_clip_floor

logger = logging.getLogger(__name__)

THREADS_ENV = "HETDECOMP_THREADS"
KNOWN_SECTIONS = ('data', 'scheme', 'partition', 'estimation', 'learners', 'output', 'study')


class EstimationConfig:
    """估计配置"""
    def __init__(self, folds: int = 5, seed: Optional[int] = None, alpha: float = 0.05,
                 clip_floor: Optional[float] = None, min_share: float = 0.01,
                 denominator_floor: float = DENOMINATOR_FLOOR, max_workers: Optional[int] = None,
                 enable_parallel: bool = True):
        self.folds = int(folds)
        self.seed = None if seed is None else int(seed)
        self.alpha = float(alpha)
        self.clip_floor = None if clip_floor is None else float(clip_floor)  # None 时取 max(1e-4, 1/(2n))
        self.min_share = float(min_share)  # 低于该占比的处理组/分组发出警告
        self.denominator_floor = float(denominator_floor)
        if not 0.0 < self.denominator_floor < 1.0:
            raise ConfigError(f"denominator_floor 必须在 (0, 1) 内，当前为 {denominator_floor}", label=denominator_floor)
        self.max_workers = max_workers
        self.enable_parallel = enable_parallel

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'EstimationConfig':
        data = data or {}
        return cls(
            folds=data.get('folds', 5),
            seed=data.get('seed'),
            alpha=data.get('alpha', 0.05),
            clip_floor=data.get('clip_floor'),
            min_share=data.get('min_share', 0.01),
            denominator_floor=data.get('denominator_floor', DENOMINATOR_FLOOR),
            max_workers=data.get('max_workers'),
            enable_parallel=data.get('enable_parallel', True),
        )

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("随机步骤需要显式种子", solution="在配置文件 estimation.seed 或命令行 --seed 中指定")
        return self.seed

    def resolve_clip_floor(self, n: int) -> float:
        return self.clip_floor if self.clip_floor is not None else default_clip_floor(n)

    def workers(self) -> int:
        if not self.enable_parallel:
            return 1
        return resolve_threads(self.max_workers)


def resolve_threads(flag: Optional[int] = None) -> int:
    """线程数：命令行参数，其次环境变量 HETDECOMP_THREADS，最后逻辑核数"""
    if flag is not None:
        value = flag
    elif os.environ.get(THREADS_ENV):
        value = os.environ[THREADS_ENV]
    else:
        value = os.cpu_count() or 1
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"无效的线程数 {value!r}", label=value) from None
    if value < 1:
        raise ConfigError(f"线程数必须 >= 1，当前为 {value}", label=value)
    return value


@dataclass
class RunConfig:
    """一次运行的完整配置"""
    bindings: DataBindings = field(default_factory=DataBindings)
    input_path: Optional[str] = None
    scheme: Optional[AggregationScheme] = None
    contrast: Optional[Contrast] = None
    partition: Dict[str, Any] = field(default_factory=dict)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    propensity_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec('cell-frequency'))
    outcome_learner: LearnerSpec = field(default_factory=lambda: LearnerSpec('cell-frequency'))
    out_dir: str = "results"
    study: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    def require_scheme(self) -> AggregationScheme:
        if self.scheme is None:
            raise ConfigError("配置缺少 scheme.arms / scheme.groups")
        return self.scheme

    def require_contrast(self) -> Contrast:
        if self.contrast is None:
            raise ConfigError("配置缺少 scheme.contrast")
        return self.contrast

    def to_dict(self) -> Dict[str, Any]:
        scheme = None
        if self.scheme is not None:
            scheme = {
                'arms': {arm: list(labels) for arm, labels in self.scheme.arms.items()},
                'groups': _group_rule_dict(self.scheme.groups),
            }
        contrast = None
        if self.contrast is not None:
            contrast = {
                'arm': self.contrast.arm,
                'reference_arm': self.contrast.reference_arm,
                'group': self.contrast.group,
                'reference_group': self.contrast.reference_group,
            }
        return {
            'source': self.source,
            'data': {
                'input': self.input_path,
                'outcome': self.bindings.outcome,
                'treatment': self.bindings.treatment,
                'covariates': list(self.bindings.covariates),
                'group': self.bindings.group,
                'continuous': self.bindings.continuous,
            },
            'scheme': scheme,
            'contrast': contrast,
            'partition': dict(self.partition),
            'estimation': self.estimation.to_dict(),
            'learners': {
                'propensity': self.propensity_learner.to_dict(),
                'outcome': self.outcome_learner.to_dict(),
            },
            'output': {'out_dir': self.out_dir},
            'study': dict(self.study),
        }


# ==========================================
# 解析
# ==========================================

def _group_rule(data: Any, bindings: DataBindings) -> GroupRule:
    if data is None:
        if not bindings.group:
            raise ConfigError("未指定分组规则（scheme.groups 或 data.group）")
        return ColumnGroups(bindings.group)
    if isinstance(data, str):
        return ColumnGroups(data)
    if 'column' in data:
        return ColumnGroups(data['column'])
    if 'threshold' in data:
        rule = data['threshold']
        return ThresholdGroups(
            covariate=rule['covariate'],
            cutoff=float(rule['cutoff']),
            above=rule.get('above', 'high'),
            below=rule.get('below', 'low'),
        )
    raise ConfigError(f"无法识别的分组规则: {data!r}")


def _group_rule_dict(rule: GroupRule) -> Dict[str, Any]:
    if isinstance(rule, ColumnGroups):
        return {'column': rule.column}
    return {'threshold': {'covariate': rule.covariate, 'cutoff': rule.cutoff,
                          'above': rule.above, 'below': rule.below}}


def run_config_from_dict(data: Mapping[str, Any], source: Optional[str] = None) -> RunConfig:
    """由已解析的 YAML 字典构造 RunConfig"""
    data = dict(data or {})
    for section in data:
        if section not in KNOWN_SECTIONS:
            logger.warning(f"忽略未知的配置段 '{section}'")

    data_section = data.get('data', {}) or {}
    bindings = DataBindings(
        outcome=data_section.get('outcome', 'y'),
        treatment=data_section.get('treatment', 't'),
        covariates=tuple(data_section.get('covariates', []) or []),
        group=data_section.get('group'),
        continuous=bool(data_section.get('continuous', False)),
    )

    scheme_section = data.get('scheme', {}) or {}
    scheme = None
    if scheme_section.get('arms'):
        arms = {str(arm): tuple(labels if isinstance(labels, (list, tuple)) else [labels])
                for arm, labels in scheme_section['arms'].items()}
        scheme = AggregationScheme(arms=arms, groups=_group_rule(scheme_section.get('groups'), bindings))
    contrast = None
    if scheme_section.get('contrast'):
        c = scheme_section['contrast']
        try:
            contrast = Contrast(c['arm'], c['reference_arm'], c['group'], c['reference_group'])
        except KeyError as exc:
            raise ConfigError(f"scheme.contrast 缺少字段 {exc.args[0]}") from None

    learners = data.get('learners', {}) or {}
    return RunConfig(
        bindings=bindings,
        input_path=data_section.get('input'),
        scheme=scheme,
        contrast=contrast,
        partition=dict(data.get('partition', {}) or {}),
        estimation=EstimationConfig.from_dict(data.get('estimation')),
        propensity_learner=LearnerSpec.from_dict(learners.get('propensity', {'kind': 'cell-frequency'})),
        outcome_learner=LearnerSpec.from_dict(learners.get('outcome', {'kind': 'cell-frequency'})),
        out_dir=(data.get('output', {}) or {}).get('out_dir', 'results'),
        study=dict(data.get('study', {}) or {}),
        source=source,
    )


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """读取 YAML 运行配置；path 为空时返回默认配置"""
    if path is None:
        return RunConfig()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"找不到配置文件: {path}", label=str(path))
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"配置文件解析失败: {exc}", label=str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError("配置文件顶层必须是映射", label=str(path))
    logger.debug(f"加载配置文件 {config_path}")
    return run_config_from_dict(data, source=str(config_path))


def apply_overrides(config: RunConfig, **flags) -> RunConfig:
    """
    命令行参数覆盖配置文件（值为 None 的参数不覆盖）

    支持: input, seed, folds, alpha, threads, out_dir
    """
    flags = {k: v for k, v in flags.items() if v is not None}
    estimation = EstimationConfig.from_dict(config.estimation.to_dict())
    if 'seed' in flags:
        estimation.seed = int(flags['seed'])
    if 'folds' in flags:
        estimation.folds = int(flags['folds'])
    if 'alpha' in flags:
        estimation.alpha = float(flags['alpha'])
    if 'threads' in flags:
        estimation.max_workers = int(flags['threads'])
    updated = replace(config, estimation=estimation)
    if 'input' in flags:
        updated = replace(updated, input_path=str(flags['input']))
    if 'out_dir' in flags:
        updated = replace(updated, out_dir=str(flags['out_dir']))
    return updated


def build_partition(settings: Mapping[str, Any], dataset: Dataset) -> PartitionScheme:
    """
    由 partition 配置段构造分箱方案

    settings: {J, method: equal_mass | equal_width, atoms, low, high}
    """
    if not settings or 'J' not in settings:
        raise ConfigError("连续处理需要 partition.J")
    J = int(settings['J'])
    atoms = tuple(float(a) for a in settings.get('atoms', []) or [])
    method = settings.get('method', 'equal_mass')
    if method == 'equal_mass':
        return PartitionScheme.equal_mass(dataset.treatment, J, atoms)
    if method == 'equal_width':
        doses = np.asarray(dataset.treatment, dtype=float)
        low = float(settings.get('low', doses.min()))
        high = float(settings.get('high', doses.max()))
        return PartitionScheme.equal_width(low, high, J, atoms)
    raise ConfigError(f"未知的分箱方法 '{method}'", label=method)
