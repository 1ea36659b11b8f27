#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义模块
所有异常携带组件名、错误类型、消息和解决建议，CLI据此决定退出码：
InputError -> 2, EstimationError -> 1
"""

from typing import Any, Dict, Optional


class HetDecompError(Exception):
    """系统错误异常基类"""

    exit_code = 1
    component = "hetdecomp"
    default_solution: Optional[str] = None

    def __init__(self, message: str, solution: Optional[str] = None, label: Any = None,
                 component: Optional[str] = None):
        self.component = component or self.component
        self.error_type = type(self).__name__
        self.message = message
        self.solution = solution or self.default_solution
        self.label = label
        super().__init__(f"[{self.component}] {self.error_type}: {message}")

    def to_dict(self) -> Dict[str, Any]:
        """机器可读的错误描述"""
        return {
            'component': self.component,
            'error_type': self.error_type,
            'message': self.message,
            'solution': self.solution,
            'label': None if self.label is None else str(self.label),
            'exit_code': self.exit_code,
        }


class InputError(HetDecompError):
    """输入错误：文件、列名、标签、配置"""
    exit_code = 2


class EstimationError(HetDecompError):
    """估计错误：空单元、退化分母、奇异协方差"""
    exit_code = 1


# ---- model ----

class MissingValue(InputError):
    component = "model"
    default_solution = "删除或填补缺失值后重试"


class UnknownColumn(InputError):
    component = "model"
    default_solution = "检查配置文件 data 段中的列名绑定"


class UnknownTreatmentLabel(InputError):
    component = "model"
    default_solution = "检查 scheme.arms 中引用的处理标签"


class EmptyArm(InputError):
    component = "model"
    default_solution = "该处理组没有样本，请调整 arms 定义"


class EmptyGroup(InputError):
    component = "model"
    default_solution = "该异质性分组没有样本，请调整分组规则"


class OutOfRangeDose(InputError):
    component = "model"
    default_solution = "扩展分箱边界或将该剂量声明为原子点"


# ---- nuisance ----

class InvalidK(InputError):
    component = "nuisance"
    default_solution = "要求 K >= 2 且 n >= K"


class LabelAbsentInFold(EstimationError):
    component = "nuisance"
    default_solution = "减小折数 K 或合并稀有处理标签"


class LearnerFailure(EstimationError):
    component = "nuisance"


# ---- moments / decomp ----

class EmptyCell(EstimationError):
    component = "moments"
    default_solution = "所需的 (t, arm, group) 单元没有样本，请合并标签或分组"


class NonFinite(EstimationError):
    component = "moments"
    default_solution = "检查倾向得分截断诊断 (clip_count)"


class DegenerateDenominator(EstimationError):
    component = "moments"


class ZeroVariance(EstimationError):
    component = "decomp"


# ---- testing ----

class SingularCovariance(EstimationError):
    component = "testing"


class InvalidAlpha(InputError):
    component = "testing"
    default_solution = "alpha 必须位于 (0, 1)"


# ---- oracle / simulate / config ----

class ZeroProbabilityCell(EstimationError):
    component = "oracle"


class QuadratureFailure(EstimationError):
    component = "simulate"


class InvalidPreset(InputError):
    component = "simulate"


class ConfigError(InputError):
    component = "config"
