#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具
"""

import sys
from pathlib import Path

import pytest
import yaml

# 添加 src 目录到路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from hetdecomp.oracle import covariance_dgp, targeting_dgp  # noqa: E402
from hetdecomp.simulate import sample  # noqa: E402


# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def project_dir():
    return project_root


@pytest.fixture(scope="session")
def targeting():
    """处理版本定向的离散数据生成过程"""
    return targeting_dgp()


@pytest.fixture(scope="session")
def covariance():
    return covariance_dgp()


@pytest.fixture(scope="session")
def targeting_sample(targeting):
    """定向过程的 n=4000 随机样本（固定种子）"""
    return sample(targeting, 4000, seed=11)


@pytest.fixture
def targeting_csv(tmp_path, targeting_sample):
    path = tmp_path / "targeting.csv"
    targeting_sample.to_frame().to_csv(path, index=False)
    return path


@pytest.fixture
def run_config(tmp_path, targeting_csv):
    """
    写出一个可直接运行的 YAML 配置，返回 (路径, 配置字典) 的工厂
    """
    def factory(**sections):
        data = {
            'data': {'input': str(targeting_csv), 'outcome': 'y', 'treatment': 't',
                     'covariates': [], 'group': 'g'},
            'scheme': {
                'arms': {'treated': [1, 2], 'control': [0]},
                'groups': {'column': 'g'},
                'contrast': {'arm': 'treated', 'reference_arm': 'control', 'group': 1, 'reference_group': 0},
            },
            'estimation': {'folds': 2, 'seed': 42, 'max_workers': 1},
            'output': {'out_dir': str(tmp_path / 'results')},
        }
        for name, section in sections.items():
            if section is None:
                data.pop(name, None)
            else:
                data[name] = {**data.get(name, {}), **section}
        path = tmp_path / "run.yaml"
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(data, f, allow_unicode=True)
        return path, data

    return factory
