"""
应用配置管理模块
默认值 → 配置文件 → 环境变量，逐层覆盖后统一校验
"""
import dataclasses
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import yaml

from config.logger import get_logger
from core.dataset import SamplingConfig
from core.dynamics import SimConfig
from core.exceptions import ConfigError
from core.milp_solver import SolverConfig
from core.opf import FcopfConfig
from core.predictor import TrainConfig
from core.relu_encoding import BoundsConfig

logger = get_logger("config")

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG_PATH = REPO_ROOT / "config" / "default.yaml"


@dataclass
class DatasetConfig:
    """数据集配置"""
    size: int = 8000
    workers: int = 1
    chunk_size: int = 128
    train_fraction: float = 0.9
    path: Optional[str] = None  # 为空时写入 output_dir/dataset.tsv


@dataclass
class NetworkConfig:
    """预测器隐藏层结构"""
    hidden: List[int] = field(default_factory=lambda: [32, 32])


@dataclass
class ScenarioConfig:
    """对比场景：负荷比例与评估的切机故障"""
    name: str = "default"
    load_scale: float = 1.0
    contingency: Optional[str] = None  # 为空时取 T-OPF 调度下最严重的故障


@dataclass
class ReportConfig:
    """报告配置"""
    include_timings: bool = False  # 计时会破坏输出的逐字节可复现性
    plot_decimation: int = 10


@dataclass
class LoggingConfig:
    """日志配置"""
    level: str = "INFO"
    format: str = "<green>{time:YY-MM-DD HH:mm:ss.SSS}</green> - [<light-blue>{extra[tag]}</light-blue>] - <level>{level}</level> - <light-green>{message}</light-green>"
    file_path: str = "logs/fcopf.log"


def _default_scenarios() -> List[ScenarioConfig]:
    return [
        ScenarioConfig(name="default", load_scale=1.0, contingency="G21"),
        ScenarioConfig(name="validation", load_scale=0.9, contingency="G11"),
        ScenarioConfig(name="high_load", load_scale=1.2, contingency="G11"),
    ]


@dataclass
class AppConfig:
    """流水线配置"""
    app_name: str = "FCOPF-Toolkit"
    version: str = "1.0.0"
    case_path: str = "config/cases/ieee9_modified.yaml"
    seed: int = 42
    output_dir: str = "output"
    model_path: Optional[str] = None  # 为空时使用 output_dir/model.yaml

    # 子配置
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    fcopf: FcopfConfig = field(default_factory=FcopfConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    scenarios: List[ScenarioConfig] = field(default_factory=_default_scenarios)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def resolve(self, path: Union[str, Path]) -> Path:
        """相对路径按仓库根目录解析"""
        path = Path(path)
        return path if path.is_absolute() else REPO_ROOT / path

    @property
    def output_path(self) -> Path:
        return self.resolve(self.output_dir)

    @property
    def dataset_file(self) -> Path:
        return self.resolve(self.dataset.path) if self.dataset.path else self.output_path / "dataset.tsv"

    @property
    def model_file(self) -> Path:
        return self.resolve(self.model_path) if self.model_path else self.output_path / "model.yaml"

    def scenario(self, name: str) -> ScenarioConfig:
        for scenario in self.scenarios:
            if scenario.name == name:
                return scenario
        raise ConfigError(f"未定义的对比场景: {name}，可选 {[s.name for s in self.scenarios]}")


PipelineConfig = AppConfig


def _to_bool(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


ENV_MAPPINGS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    'FCOPF_OUTPUT_DIR': ('output_dir', str),
    'FCOPF_SEED': ('seed', int),
    'FCOPF_CASE_PATH': ('case_path', str),
    'FCOPF_MODEL_PATH': ('model_path', str),

    # 数据集
    'FCOPF_WORKERS': ('dataset.workers', int),
    'FCOPF_DATASET_SIZE': ('dataset.size', int),

    # 报告
    'FCOPF_INCLUDE_TIMINGS': ('report.include_timings', _to_bool),

    # 日志
    'FCOPF_LOG_LEVEL': ('logging.level', str),
    'FCOPF_LOG_FILE': ('logging.file_path', str),
}


def _convert(current: Any, value: Any, path: str) -> Any:
    """按当前字段的类型转换文件中的值"""
    if isinstance(current, Enum):
        try:
            return type(current)(value)
        except ValueError:
            choices = [m.value for m in type(current)]
            raise ConfigError(f"{path}: 无效取值 {value!r}，可选 {choices}")
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{path}: 应为布尔值")
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


class ConfigManager:
    """配置管理器"""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.config_file = resolve_config_path(config_file) if config_file else None
        self.config = AppConfig()
        self._load_config()

    def _load_config(self):
        """加载配置"""
        # 1. 加载默认配置
        self.config = AppConfig()

        # 2. 从配置文件加载
        if self.config_file is not None:
            self._load_from_file(self.config_file)

        # 3. 从环境变量覆盖
        self._load_from_env()

        # 4. 验证配置
        self._validate_config()

    def _load_from_file(self, config_file: Path):
        """从配置文件加载"""
        if not config_file.exists():
            raise ConfigError(f"配置文件不存在: {config_file}")
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                if config_file.suffix == '.json':
                    config_data = json.load(f)
                elif config_file.suffix in ('.yml', '.yaml'):
                    config_data = yaml.safe_load(f)
                else:
                    raise ConfigError(f"不支持的配置文件格式: {config_file}")
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"配置文件解析失败 {config_file}: {e}")

        if config_data is None:
            return
        if not isinstance(config_data, dict):
            raise ConfigError(f"配置文件顶层应为映射: {config_file}")
        self._merge_config(self.config, config_data, "")
        logger.debug(f"已加载配置文件 {config_file}")

    def _merge_config(self, target: Any, config_data: Dict[str, Any], prefix: str):
        """递归合并配置数据"""
        names = {f.name for f in dataclasses.fields(target)}
        for key, value in config_data.items():
            path = f"{prefix}{key}"
            if key not in names:
                logger.warning(f"忽略未知配置项: {path}")
                continue
            current = getattr(target, key)
            if key == "scenarios" and target is self.config:
                setattr(target, key, self._parse_scenarios(value))
            elif dataclasses.is_dataclass(current):
                if not isinstance(value, dict):
                    raise ConfigError(f"{path}: 应为映射")
                self._merge_config(current, value, f"{path}.")
            else:
                setattr(target, key, _convert(current, value, path))

    @staticmethod
    def _parse_scenarios(value: Any) -> List[ScenarioConfig]:
        if not isinstance(value, list):
            raise ConfigError("scenarios: 应为列表")
        scenarios = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ConfigError(f"scenarios[{i}]: 应为映射")
            try:
                scenarios.append(ScenarioConfig(**item))
            except TypeError as e:
                raise ConfigError(f"scenarios[{i}]: {e}")
        return scenarios

    def _load_from_env(self):
        """从环境变量加载"""
        for env_var, (config_path, converter) in ENV_MAPPINGS.items():
            value = os.getenv(env_var)
            if value is not None:
                try:
                    self._set_nested_config(config_path, converter(value))
                except ValueError as e:
                    raise ConfigError(f"环境变量 {env_var} 转换失败: {e}")

    def _set_nested_config(self, path: str, value: Any):
        """设置嵌套配置"""
        parts = path.split('.')
        obj = self.config
        for part in parts[:-1]:
            obj = getattr(obj, part)
        setattr(obj, parts[-1], value)

    def _validate_config(self):
        """验证配置"""
        config = self.config
        if not config.resolve(config.case_path).exists():
            raise ConfigError(f"case_path: 算例文件不存在 {config.case_path}")
        if config.seed < 0:
            raise ConfigError("seed: 必须为非负整数")

        for name, sub in (("sampling", config.sampling), ("training", config.training),
                          ("simulation", config.simulation), ("solver", config.solver)):
            try:
                sub.validate()
            except ConfigError as e:
                raise ConfigError(f"{name}: {e}")
        try:
            config.fcopf.validate()
        except ConfigError as e:
            raise ConfigError(f"fcopf: {e}")

        if config.dataset.size < 2:
            raise ConfigError("dataset.size: 至少需要2个场景")
        if config.dataset.workers < 1 or config.dataset.chunk_size < 1:
            raise ConfigError("dataset.workers / dataset.chunk_size: 必须为正整数")
        if not 0 < config.dataset.train_fraction < 1:
            raise ConfigError("dataset.train_fraction: 必须位于 (0, 1)")
        if not config.network.hidden or any(int(h) < 1 for h in config.network.hidden):
            raise ConfigError("network.hidden: 每层神经元数必须为正整数")
        if config.report.plot_decimation < 1:
            raise ConfigError("report.plot_decimation: 至少为1")
        if config.bounds.margin < 0 or config.bounds.load_margin < 0:
            raise ConfigError("bounds: 放宽量不能为负")

        names = set()
        for scenario in config.scenarios:
            if scenario.name in names:
                raise ConfigError(f"scenarios: 场景名 {scenario.name} 重复")
            names.add(scenario.name)
            if scenario.load_scale <= 0:
                raise ConfigError(f"scenarios.{scenario.name}.load_scale: 必须大于0")

    def get_config(self) -> AppConfig:
        """获取配置"""
        return self.config

    def save_config(self, config_file: Union[str, Path]):
        """保存配置到文件"""
        config_file = Path(config_file)
        config_dict = self._config_to_dict(self.config)
        with open(config_file, 'w', encoding='utf-8') as f:
            if config_file.suffix == '.json':
                json.dump(config_dict, f, indent=2, ensure_ascii=False)
            else:
                yaml.safe_dump(config_dict, f, default_flow_style=False, allow_unicode=True,
                               sort_keys=False)

    def _config_to_dict(self, config_obj) -> Any:
        """将配置对象转换为字典"""
        if dataclasses.is_dataclass(config_obj):
            return {f.name: self._config_to_dict(getattr(config_obj, f.name))
                    for f in dataclasses.fields(config_obj)}
        if isinstance(config_obj, Enum):
            return config_obj.value
        if isinstance(config_obj, (list, tuple)):
            return [self._config_to_dict(v) for v in config_obj]
        return config_obj

    def reload_config(self):
        """重新加载配置"""
        self._load_config()


def resolve_config_path(name: Union[str, Path]) -> Path:
    """`default` 指向内置默认配置，其余按路径解析"""
    if str(name) == "default":
        return DEFAULT_CONFIG_PATH
    path = Path(name)
    if not path.is_absolute() and not path.exists():
        path = REPO_ROOT / path
    return path


# 全局配置实例
_config_manager: Optional[ConfigManager] = None


def get_config() -> AppConfig:
    """获取全局配置"""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager.get_config()


def init_config(config_file: Optional[Union[str, Path]] = None) -> ConfigManager:
    """初始化配置"""
    global _config_manager
    _config_manager = ConfigManager(config_file)
    return _config_manager
