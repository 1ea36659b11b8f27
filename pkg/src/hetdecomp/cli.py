#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口
子命令: decompose, test, power, simulate, partition
"""

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import joblib
import numpy as np
import pandas as pd
import scipy
import sklearn
import yaml

from . import __version__
from .config import RunConfig, apply_overrides, build_partition, load_run_config, resolve_threads
from .decomp import DecompositionReport, decompose, regression_beta3
from .errors import ConfigError, HetDecompError, InvalidPreset
from .model import discretize, load_dataset, validate
from .nuisance import assign_folds, fit_aggregates, fit_granular
from .simulate import (
    NULL, PowerDesign, StudyRunner, analytic_power_table, get_preset, preset_names, study_config_for,
)
from .testing import PowerSpec, analytic_power, strong_null_tests

logger = logging.getLogger(__name__)


# ==========================================
# 运行清单
# ==========================================

def package_versions() -> Dict[str, str]:
    return {
        'hetdecomp': __version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'pandas': pd.__version__,
        'scipy': scipy.__version__,
        'scikit-learn': sklearn.__version__,
        'joblib': joblib.__version__,
        'PyYAML': yaml.__version__,
    }


def write_manifest(out_dir: Path, command: str, argv: List[str], config: Dict[str, Any],
                   seeds: Dict[str, Any], outputs: List[str], performance_stats: Dict[str, Any]) -> Path:
    """运行清单：命令、参数、解析后的配置、种子、版本与性能统计"""
    manifest = {
        'command': command,
        'argv': list(argv),
        'config': config,
        'seeds': seeds,
        'versions': package_versions(),
        'outputs': outputs,
        'performance_stats': performance_stats,
        'created_at': time.strftime('%Y-%m-%dT%H:%M:%S'),
    }
    path = out_dir / 'manifest.json'
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, default=str)
    return path


def _out_dir(path: str) -> Path:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


# ==========================================
# 估计流程
# ==========================================

def run_decomposition(config: RunConfig):
    """
    读数据 → 校验 → 交叉拟合 → 聚合冗余参数 → 分解

    Returns:
        (report, nuisances, dataset)
    """
    if not config.input_path:
        raise ConfigError("未指定输入数据（data.input 或 --input）")
    dataset = load_dataset(config.input_path, config.bindings)
    if dataset.continuous:
        partition = build_partition(config.partition, dataset)
        logger.info(f"连续剂量按 {partition.J} 个分箱离散化，原子点 {list(partition.atoms)}")
        dataset = discretize(dataset, partition)

    scheme = config.require_scheme()
    contrast = config.require_contrast()
    estimation = config.estimation
    validation = validate(dataset, scheme, estimation.min_share, contrast)

    seed = estimation.require_seed()
    folds = assign_folds(dataset.n, estimation.folds, seed)
    granular = fit_granular(
        dataset, folds, config.propensity_learner, config.outcome_learner,
        clip_floor=estimation.resolve_clip_floor(dataset.n),
        max_workers=min(estimation.workers(), estimation.folds),
    )
    nuisances = fit_aggregates(dataset, scheme, granular, contrast)
    report = decompose(dataset, contrast, nuisances, estimation.alpha,
                       seeds={'fold_seed': seed}, validation=validation,
                       denominator_floor=estimation.denominator_floor)
    regression = regression_beta3(dataset, scheme, contrast)
    report.diagnostics['regression_beta3'] = {'estimate': regression.beta3, 'se': regression.se}
    return report, nuisances, dataset


def _print_report(report: DecompositionReport):
    columns = ['estimate', 'se', 'p', 'ci_low', 'ci_high']
    rows = report.table[report.table['level'].isin(['Delta', 'DiM', 'ADiM'])]
    print(f"\n分解结果 (n={report.n}, α={report.alpha})")
    print(rows[columns].to_string(float_format=lambda v: f"{v:.4f}"))
    for estimand in ('DiM', 'ADiM'):
        check = report.identity.get(estimand, {})
        if check.get('flagged'):
            print(f"⚠️ {estimand} 分解恒等式偏差 {check['gap']:.4g}")


# ==========================================
# 子命令
# ==========================================

def _load(args) -> RunConfig:
    config = load_run_config(args.config)
    return apply_overrides(config, input=args.input, seed=args.seed, folds=args.folds, alpha=args.alpha,
                           threads=args.threads, out_dir=args.out_dir)


def cmd_decompose(args, argv: List[str]) -> int:
    config = _load(args)
    report, nuisances, _ = run_decomposition(config)
    out_dir = _out_dir(config.out_dir)
    report.to_json(out_dir / 'report.json')
    report.plot_table().to_csv(out_dir / 'plot_table.csv', index=False)
    write_manifest(out_dir, 'decompose', argv, config.to_dict(), report.seeds,
                   ['report.json', 'plot_table.csv'], dict(nuisances.performance_stats))
    _print_report(report)
    print(f"\n✅ 结果已写入 {out_dir}")
    return 0


def cmd_test(args, argv: List[str]) -> int:
    config = _load(args)
    report, nuisances, dataset = run_decomposition(config)
    results = strong_null_tests(report.contrast, dataset, nuisances, report=report, alpha=config.estimation.alpha,
                                denominator_floor=config.estimation.denominator_floor)
    out_dir = _out_dir(config.out_dir)
    with open(out_dir / 'tests.json', 'w', encoding='utf-8') as f:
        json.dump({method: result.to_dict() for method, result in results.items()}, f, ensure_ascii=False, indent=2)
    write_manifest(out_dir, 'test', argv, config.to_dict(), report.seeds, ['tests.json'],
                   dict(nuisances.performance_stats))
    print("\n强组效应同质性检验")
    for method, result in results.items():
        verdict = "拒绝" if result.reject else "不拒绝"
        print(f"  {method:<9} 统计量 {result.statistic:.4f}  临界值 {result.critical_value:.4f}  "
              f"p = {result.p_value:.4f}  J = {result.J}  {verdict}")
    return 0


def _study_preset(args, kind: str) -> Dict[str, Any]:
    if not args.preset:
        raise InvalidPreset(f"{kind} 子命令需要 --preset")
    preset = get_preset(args.preset)
    if preset['kind'] != kind:
        raise InvalidPreset(f"预设 '{args.preset}' 不是 {kind} 研究", label=args.preset)
    return preset


def _runner(args, config: RunConfig) -> StudyRunner:
    seed = config.estimation.require_seed()
    study = study_config_for(
        args.preset, seed,
        replications=args.reps if args.reps is not None else config.study.get('replications'),
        n=args.n if args.n is not None else config.study.get('n'),
        alpha=config.estimation.alpha,
        folds=config.estimation.folds,
        n_jobs=resolve_threads(config.estimation.max_workers),
    )
    return StudyRunner(study)


def cmd_power(args, argv: List[str]) -> int:
    config = _load(args)
    out_dir = _out_dir(config.out_dir)
    if args.analytic:
        if args.J is None or args.xi_dense is None:
            raise InvalidPreset("--analytic 需要 --J 和 --xi-dense", label='analytic')
        powers = analytic_power(PowerSpec.dense(args.J, args.xi_dense, config.estimation.alpha))
        with open(out_dir / 'analytic_power.json', 'w', encoding='utf-8') as f:
            json.dump({'J': args.J, 'xi': args.xi_dense, 'alpha': config.estimation.alpha, **powers}, f, indent=2)
        write_manifest(out_dir, 'power', argv, config.to_dict(), {}, ['analytic_power.json'], {})
        for method, value in powers.items():
            print(f"  {method:<9} {value:.4f}")
        return 0

    preset = _study_preset(args, 'power')
    runner = _runner(args, config)
    table = runner.power_study(preset['designs'])
    designs: List[PowerDesign] = [d for d in preset['designs'] if d is not NULL]
    curves = analytic_power_table(designs, runner.config.grid, runner.config.n, runner.config.alpha)
    table.to_csv(out_dir / 'power_table.csv', index=False)
    curves.to_csv(out_dir / 'analytic_power.csv', index=False)
    write_manifest(out_dir, 'power', argv, {**config.to_dict(), 'study': runner.config.to_dict()},
                   {'master_seed': runner.config.seed}, ['power_table.csv', 'analytic_power.csv'],
                   runner.get_performance_stats())
    print(table.pivot_table(index=['design', 'J'], columns='method', values='power').to_string(
        float_format=lambda v: f"{v:.3f}"))
    return 0


def cmd_simulate(args, argv: List[str]) -> int:
    config = _load(args)
    preset = _study_preset(args, 'coverage')
    runner = _runner(args, config)
    result = runner.coverage_study(preset['dgp'], preset['parameter'])
    out_dir = _out_dir(config.out_dir)
    with open(out_dir / 'coverage.json', 'w', encoding='utf-8') as f:
        json.dump(result, f, ensure_ascii=False, indent=2)
    write_manifest(out_dir, 'simulate', argv, {**config.to_dict(), 'study': runner.config.to_dict()},
                   {'master_seed': runner.config.seed}, ['coverage.json'], runner.get_performance_stats())
    print(f"  {result['parameter']}: 覆盖率 {result['coverage']:.3f} (MC SE {result['mc_se']:.3f})，"
          f"{result['replications']} 次有效重复")
    return 0


def cmd_partition(args, argv: List[str]) -> int:
    config = _load(args)
    preset = _study_preset(args, 'partition')
    runner = _runner(args, config)
    table = runner.partition_study(preset['dgp'])
    out_dir = _out_dir(config.out_dir)
    table.to_csv(out_dir / 'partition_table.csv', index=False)
    summary = {'target_d0': table.attrs['target'], 'gap_slope': table.attrs['slope'],
               'error_slope': table.attrs['error_slope']}
    with open(out_dir / 'partition_summary.json', 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2)
    write_manifest(out_dir, 'partition', argv, {**config.to_dict(), 'study': runner.config.to_dict()},
                   {'master_seed': runner.config.seed}, ['partition_table.csv', 'partition_summary.json'],
                   runner.get_performance_stats())
    print(table.to_string(index=False, float_format=lambda v: f"{v:.3g}"))
    print(f"  log-log 斜率: 积分差距 {summary['gap_slope']:.3f}，估计误差 {summary['error_slope']:.3f}")
    return 0


COMMANDS = {
    'decompose': cmd_decompose,
    'test': cmd_test,
    'power': cmd_power,
    'simulate': cmd_simulate,
    'partition': cmd_partition,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='hetdecomp',
        description='分组处理效应比较的异质性分解',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  hetdecomp decompose --config hetdecomp_config_example.yaml --input data.csv --seed 42
  hetdecomp test --config run.yaml --seed 42 --alpha 0.05
  hetdecomp power --preset figure2-dense --reps 2000 --seed 1
  hetdecomp power --analytic --J 50 --xi-dense 0.4 --alpha 0.05
  hetdecomp partition --preset partition-smooth --seed 7
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument('--config', help='YAML 运行配置文件')
        sub.add_argument('--input', help='输入数据 CSV（覆盖配置文件）')
        sub.add_argument('--seed', type=int, help='主随机种子')
        sub.add_argument('--folds', type=int, help='交叉拟合折数 K')
        sub.add_argument('--alpha', type=float, help='显著性水平')
        sub.add_argument('--threads', type=int, help='线程数（默认 HETDECOMP_THREADS 或逻辑核数）')
        sub.add_argument('--out-dir', help='输出目录')
        sub.add_argument('--verbose', '-v', action='store_true', help='输出调试日志')
        if name in ('power', 'simulate', 'partition'):
            sub.add_argument('--preset', help=f"研究预设: {', '.join(preset_names())}")
            sub.add_argument('--reps', type=int, help='重复次数（覆盖预设）')
            sub.add_argument('--n', type=int, help='样本量（覆盖预设）')
        if name == 'power':
            sub.add_argument('--analytic', action='store_true', help='只计算解析功效')
            sub.add_argument('--J', type=int, help='解析功效的维数 J')
            sub.add_argument('--xi-dense', type=float, help='稠密局部备择 ξ_t 的取值')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """命令行接口；返回退出码 0 成功、1 估计错误、2 输入错误"""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        return COMMANDS[args.command](args, argv)
    except HetDecompError as exc:
        print(json.dumps(exc.to_dict(), ensure_ascii=False, default=str), file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("\n用户中断操作", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
