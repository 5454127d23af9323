"""
FCOPF 工具命令行入口
数据集生成、预测器训练、三种调度模型求解与闭环对比
"""
import argparse
import sys
from typing import List, Optional

import yaml

from api.harness import PipelineRunner, ScenarioOverride
from config.app_config import init_config
from config.logger import get_logger, setup_logging
from core.exceptions import FcopfError
from core.opf import ModelKind

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=None,
                        help='配置文件路径，default 表示内置默认配置')
    common.add_argument('--seed', type=int, default=None, help='随机种子（覆盖配置）')
    common.add_argument('--log-level', type=str, default=None, help='日志级别')
    return common


def _scenario_args(parser: argparse.ArgumentParser):
    parser.add_argument('--scenario', type=str, default=None, help='配置中的场景名')
    parser.add_argument('--load-scale', type=float, default=None, help='统一负荷比例（覆盖场景）')
    parser.add_argument('--contingency', type=str, default=None, help='评估的切除机组，如 G11')


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='fcopf', description='频率约束最优潮流工具')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    case = commands.add_parser('case', help='算例操作')
    case_commands = case.add_subparsers(dest='action', metavar='ACTION')
    case_commands.required = True
    case_commands.add_parser('check', parents=[common], help='检查算例与默认运行点')

    dataset = commands.add_parser('dataset', help='数据集操作')
    dataset_commands = dataset.add_subparsers(dest='action', metavar='ACTION')
    dataset_commands.required = True
    generate = dataset_commands.add_parser('generate', parents=[common], help='采样并仿真生成数据集')
    generate.add_argument('--size', type=int, default=None, help='场景数量')
    generate.add_argument('--workers', type=int, default=None, help='并行进程数')

    commands.add_parser('train', parents=[common], help='训练频率预测器')

    solve = commands.add_parser('solve', parents=[common], help='求解调度模型')
    solve.add_argument('--model', required=True, choices=[k.value for k in ModelKind],
                       help='调度模型')
    _scenario_args(solve)

    validate = commands.add_parser('validate', parents=[common], help='预测器与仿真对照')
    _scenario_args(validate)

    compare = commands.add_parser('compare', parents=[common], help='三种调度模型对比')
    _scenario_args(compare)

    commands.add_parser('pipeline', parents=[common], help='端到端执行全部阶段')
    return parser


def _override(runner: PipelineRunner, args: argparse.Namespace) -> ScenarioOverride:
    if args.scenario is None and args.load_scale is None:
        base = runner.override(runner.config.scenarios[0].name) if runner.config.scenarios \
            else ScenarioOverride.uniform(runner.case, 1.0, name="default")
    elif args.scenario is not None:
        base = runner.override(args.scenario)
    else:
        base = ScenarioOverride.uniform(runner.case, 1.0, name="custom")
    scales = base.load_scales
    if args.load_scale is not None:
        scales = tuple([float(args.load_scale)] * len(runner.case.loads))
    return ScenarioOverride(load_scales=scales, contingency=args.contingency or base.contingency,
                            name=base.name)


def _dump(data) -> None:
    sys.stdout.write(yaml.safe_dump(data, sort_keys=False, allow_unicode=True))


def run_command(args: argparse.Namespace) -> int:
    """执行已解析的子命令"""
    config = init_config(args.config).get_config()
    if args.seed is not None:
        config.seed = args.seed
    if args.log_level:
        config.logging.level = args.log_level.upper()
    setup_logging(config.logging)
    logger = get_logger("main")
    logger.info(f"启动 {config.app_name} v{config.version}: {args.command}")

    runner = PipelineRunner(config)
    if args.command == 'case':
        _dump(runner.check_case())
    elif args.command == 'dataset':
        if args.size is not None:
            config.dataset.size = args.size
        if args.workers is not None:
            config.dataset.workers = args.workers
        rows, manifest = runner.generate_dataset()
        _dump({"path": str(config.dataset_file), "rows": len(rows), "arity": manifest.arity})
    elif args.command == 'train':
        _, evaluation = runner.train()
        _dump({"model": str(config.model_file), "held_out": evaluation.as_dict()})
    elif args.command == 'solve':
        result = runner.solve(ModelKind(args.model), _override(runner, args))
        _dump(result.to_dict(config.report.include_timings))
    elif args.command == 'validate':
        _dump(runner.validate(_override(runner, args)).to_dict())
    elif args.command == 'compare':
        report = runner.compare(_override(runner, args))
        _dump(report.to_dict(config.report.include_timings))
    elif args.command == 'pipeline':
        _dump(runner.run())
    return EXIT_OK


def cli_main(argv: Optional[List[str]] = None) -> int:
    """命令行主函数，返回退出码：0 成功，1 领域错误，2 用法错误"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        return run_command(args)
    except FcopfError as e:
        get_logger("main").error(f"执行失败: {e}")
        sys.stderr.write(f"错误: {e}\n")
        return EXIT_DOMAIN_ERROR
    except KeyboardInterrupt:
        sys.stderr.write("\n已中断\n")
        return EXIT_DOMAIN_ERROR


def main():
    """主函数"""
    sys.exit(cli_main())


if __name__ == '__main__':
    main()
