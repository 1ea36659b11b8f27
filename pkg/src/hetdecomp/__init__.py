"""
分组处理效应比较的异质性分解

包含以下功能模块:
- model: 数据集、处理聚合、分组规则与连续剂量分箱
- nuisance: 交叉拟合冗余参数
- moments: 线性矩条件与影响函数
- decomp: d/δ/Δ 分解、DiM/ADiM 与联合推断
- testing: 强组效应同质性检验与解析功效
- oracle: 离散数据生成过程的总体真值
- simulate: 蒙特卡洛研究
- config / cli: 运行配置与命令行
"""

__version__ = "0.1.0"

# 主要对象的快捷导入
from .errors import EstimationError, HetDecompError, InputError
from .model import AggregationScheme, ColumnGroups, Contrast, Dataset, PartitionScheme, ThresholdGroups
from .nuisance import LearnerSpec, NuisanceEstimates, assign_folds, fit_aggregates, fit_granular
from .decomp import DecompositionReport, InfluenceMatrix, decompose, infer
from .testing import analytic_power, delta1_test, supremum_test, wald_test

__all__ = [
    'HetDecompError',
    'InputError',
    'EstimationError',
    'Dataset',
    'AggregationScheme',
    'ColumnGroups',
    'ThresholdGroups',
    'Contrast',
    'PartitionScheme',
    'LearnerSpec',
    'NuisanceEstimates',
    'assign_folds',
    'fit_granular',
    'fit_aggregates',
    'DecompositionReport',
    'InfluenceMatrix',
    'decompose',
    'infer',
    'wald_test',
    'supremum_test',
    'delta1_test',
    'analytic_power',
]
