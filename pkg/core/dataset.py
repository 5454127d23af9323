"""
训练数据集模块
场景采样、基于仿真的标签生成以及数据集文件读写
"""
import concurrent.futures
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from config.logger import get_logger
from core.dynamics import (
    COI, MeasurementRule, SimConfig, measure_nadir, measure_rocof, simulate_trip, simulate_trips
)
from core.exceptions import (
    ConfigError, DatasetError, DatasetFormatError, FingerprintMismatchError,
    RangesInfeasibleError, SimulationError
)
from core.grid import GridCase, OperatingPoint, case_fingerprint, operating_point, rebalance_slack

logger = get_logger("dataset")

DATASET_MAGIC = "# fcopf-dataset v1"
MANIFEST_END = "# ---"
LABEL_NAMES = ["nadir", "rocof"]
LABEL_UNITS = ["Hz", "Hz/s"]


@dataclass
class SamplingConfig:
    """场景采样范围（相对于算例负荷与机组默认出力的比例）"""
    load_scale_range: Tuple[float, float] = (0.9, 1.1)
    gen_scale_range: Tuple[float, float] = (0.85, 1.15)
    max_attempts: int = 1000
    contingencies: Optional[List[str]] = None

    def __post_init__(self):
        self.load_scale_range = tuple(self.load_scale_range)
        self.gen_scale_range = tuple(self.gen_scale_range)

    def validate(self):
        for name in ("load_scale_range", "gen_scale_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"采样范围 {name} 无效: [{lo}, {hi}]")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts 至少为1")


@dataclass(frozen=True)
class Scenario:
    """一个训练场景：负荷比例、各组单机出力与切除机组"""
    index: int
    load_scales: Tuple[float, ...]
    group_outputs: Tuple[float, ...]
    tripped_unit: str
    seed: int


@dataclass
class DatasetRow:
    """特征向量与标签 (nadir, rocof)"""
    features: np.ndarray
    labels: np.ndarray

    @property
    def nadir(self) -> float:
        return float(self.labels[0])

    @property
    def rocof(self) -> float:
        return float(self.labels[1])


@dataclass
class DatasetManifest:
    """数据集清单"""
    feature_names: List[str]
    feature_units: List[str]
    contingencies: List[str]
    case_fingerprint: str
    sampling: Dict[str, Any] = field(default_factory=dict)
    simulator: Dict[str, Any] = field(default_factory=dict)
    row_count: int = 0
    seed: Optional[int] = None
    label_names: List[str] = field(default_factory=lambda: list(LABEL_NAMES))
    label_units: List[str] = field(default_factory=lambda: list(LABEL_UNITS))

    @property
    def arity(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        try:
            return cls(**data)
        except TypeError as e:
            raise DatasetFormatError(f"数据集清单字段错误: {e}")


def _plain(config: Any) -> Dict[str, Any]:
    """配置对象转为可写入YAML的普通字典"""
    result = {}
    for key, value in asdict(config).items():
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        result[key] = value
    return result


def feature_names(case: GridCase, contingencies: Sequence[str]) -> Tuple[List[str], List[str]]:
    """特征名称与单位：各组单机出力、各负荷功率、切机位置独热编码"""
    names = [f"P_{group.name}" for group in case.gen_groups]
    names += [f"Pload{j + 1}_B{load.bus}" for j, load in enumerate(case.loads)]
    names += [f"trip_{unit}" for unit in contingencies]
    units = ["MW"] * (len(case.gen_groups) + len(case.loads)) + ["-"] * len(contingencies)
    return names, units


def scenario_features(group_outputs: Sequence[float], loads: Sequence[float],
                      tripped_unit: str, contingencies: Sequence[str]) -> np.ndarray:
    if tripped_unit not in contingencies:
        raise DatasetError(f"切除机组 {tripped_unit} 不在可信故障集中")
    one_hot = [1.0 if unit == tripped_unit else 0.0 for unit in contingencies]
    return np.concatenate([np.asarray(group_outputs, dtype=float),
                           np.asarray(loads, dtype=float), one_hot])


def scenario_operating_point(case: GridCase, scenario: Scenario) -> OperatingPoint:
    loads = case.load_vector() * np.asarray(scenario.load_scales)
    return operating_point(case, scenario.group_outputs, loads)


def sample_scenarios(case: GridCase, ranges: SamplingConfig, n: int, seed: int) -> List[Scenario]:
    """
    均匀独立采样负荷比例与各组单机出力，平衡母线机组组承担缺额

    Args:
        case: 算例
        ranges: 采样范围
        n: 场景数量
        seed: 随机种子，每个场景派生独立子种子

    Returns:
        场景列表
    """
    ranges.validate()
    if n < 1:
        raise DatasetError("场景数量至少为1")
    contingencies = list(ranges.contingencies or case.credible_units())
    for unit in contingencies:
        case.group_index(unit)

    base_loads = case.load_vector()
    g_slack = case.slack_group_index()
    slack_group = case.gen_groups[g_slack]
    lo_scale, hi_scale = ranges.gen_scale_range
    gen_lo = np.array([max(g.p_min, lo_scale * g.setpoint) for g in case.gen_groups])
    gen_hi = np.array([min(g.p_max, hi_scale * g.setpoint) for g in case.gen_groups])
    bad = [g.name for g, lo, hi in zip(case.gen_groups, gen_lo, gen_hi) if lo > hi]
    if bad:
        raise RangesInfeasibleError(f"机组组 {bad} 的采样范围与出力上下限无交集")

    scenarios = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        for _ in range(ranges.max_attempts):
            scales = rng.uniform(ranges.load_scale_range[0], ranges.load_scale_range[1],
                                 size=len(base_loads))
            outputs = rng.uniform(gen_lo, gen_hi)
            outputs = rebalance_slack(case, outputs, base_loads * scales)
            if slack_group.p_min <= outputs[g_slack] <= slack_group.p_max:
                break
        else:
            raise RangesInfeasibleError(
                f"场景 {i}: 连续 {ranges.max_attempts} 次采样后平衡机组仍越限")
        trip = contingencies[int(rng.integers(len(contingencies)))]
        scenarios.append(Scenario(
            index=i,
            load_scales=tuple(float(s) for s in scales),
            group_outputs=tuple(float(p) for p in outputs),
            tripped_unit=trip,
            seed=int(child.generate_state(1)[0]),
        ))
    logger.info(f"采样完成: {n} 个场景, 种子 {seed}")
    return scenarios


def label_scenario(case: GridCase, scenario: Scenario, sim: SimConfig,
                   contingencies: Optional[Sequence[str]] = None) -> DatasetRow:
    """仿真单个场景并在扰动母线处测量 RoCoF 与最低频率"""
    contingencies = list(contingencies or case.credible_units())
    op = scenario_operating_point(case, scenario)
    try:
        trace = simulate_trip(case, op, scenario.tripped_unit, sim)
    except SimulationError as e:
        raise SimulationError(f"场景 {scenario.index}: {e}") from e
    bus = COI if sim.measurement_bus_rule == MeasurementRule.COI else trace.disturbance_bus
    labels = np.array([measure_nadir(trace, bus), measure_rocof(trace, bus, sim.rocof_window)])
    features = scenario_features(scenario.group_outputs, op.loads, scenario.tripped_unit, contingencies)
    return DatasetRow(features=features, labels=labels)


def _label_chunk(case: GridCase, scenarios: List[Scenario], sim: SimConfig,
                 contingencies: List[str]) -> List[Tuple[int, DatasetRow]]:
    ops = [scenario_operating_point(case, s) for s in scenarios]
    unit = scenarios[0].tripped_unit
    try:
        batch = simulate_trips(case, ops, unit, sim)
    except SimulationError as e:
        ids = [s.index for s in scenarios]
        raise SimulationError(f"场景 {ids[0]}..{ids[-1]} (切除 {unit}): {e}") from e
    result = []
    for s, op, metric in zip(scenarios, ops, batch.metrics()):
        features = scenario_features(s.group_outputs, op.loads, s.tripped_unit, contingencies)
        result.append((s.index, DatasetRow(features=features,
                                           labels=np.array([metric.nadir, metric.rocof]))))
    return result


def label_scenarios(case: GridCase, scenarios: Sequence[Scenario], sim: SimConfig,
                    workers: int = 1, chunk_size: int = 128,
                    contingencies: Optional[Sequence[str]] = None) -> List[DatasetRow]:
    """
    批量并行生成标签，按故障分组向量化仿真，输出顺序与场景编号一致
    """
    contingencies = list(contingencies or case.credible_units())
    by_unit: Dict[str, List[Scenario]] = {}
    for s in scenarios:
        by_unit.setdefault(s.tripped_unit, []).append(s)
    tasks = []
    for unit in sorted(by_unit, key=case.units().index):
        group = by_unit[unit]
        for start in range(0, len(group), chunk_size):
            tasks.append(group[start:start + chunk_size])

    rows: List[Optional[DatasetRow]] = [None] * len(scenarios)
    position = {s.index: k for k, s in enumerate(scenarios)}
    if workers > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_label_chunk, case, task, sim, contingencies) for task in tasks]
            for future in futures:
                for index, row in future.result():
                    rows[position[index]] = row
    else:
        for task in tasks:
            for index, row in _label_chunk(case, task, sim, contingencies):
                rows[position[index]] = row
    logger.info(f"标签生成完成: {len(rows)} 行, {len(tasks)} 个仿真批次")
    return rows


def build_manifest(case: GridCase, sampling: SamplingConfig, sim: SimConfig,
                   row_count: int, seed: Optional[int] = None) -> DatasetManifest:
    contingencies = list(sampling.contingencies or case.credible_units())
    names, units = feature_names(case, contingencies)
    return DatasetManifest(
        feature_names=names,
        feature_units=units,
        contingencies=contingencies,
        case_fingerprint=case_fingerprint(case),
        sampling=_plain(sampling),
        simulator=_plain(sim),
        row_count=row_count,
        seed=seed,
    )


def write_dataset(path: Union[str, Path], rows: Sequence[DatasetRow],
                  manifest: DatasetManifest) -> Path:
    """写入数据集：YAML清单头 + 每行一条制表符分隔记录（完整精度十进制）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest.row_count = len(rows)
    header = yaml.safe_dump(manifest.to_dict(), sort_keys=False, allow_unicode=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(DATASET_MAGIC + "\n")
        for line in header.splitlines():
            f.write(f"# {line}\n")
        f.write(MANIFEST_END + "\n")
        for i, row in enumerate(rows):
            if len(row.features) != manifest.arity or len(row.labels) != len(manifest.label_names):
                raise DatasetError(f"第 {i} 行维度与清单不符")
            values = list(row.features) + list(row.labels)
            f.write("\t".join(repr(float(v)) for v in values) + "\n")
    logger.info(f"数据集已写入 {path}: {len(rows)} 行")
    return path


def read_dataset(path: Union[str, Path],
                 expected_fingerprint: Optional[str] = None) -> Tuple[List[DatasetRow], DatasetManifest]:
    """读取数据集文件并校验清单与算例指纹"""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"数据集文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: 缺少数据集文件头")
    try:
        end = lines.index(MANIFEST_END)
    except ValueError:
        raise DatasetFormatError(f"{path}: 清单未结束")
    try:
        data = yaml.safe_load("\n".join(line[2:] for line in lines[1:end]))
    except yaml.YAMLError as e:
        raise DatasetFormatError(f"{path}: 清单解析失败: {e}")
    if not isinstance(data, dict):
        raise DatasetFormatError(f"{path}: 清单应为映射")
    manifest = DatasetManifest.from_dict(data)

    if expected_fingerprint is not None and manifest.case_fingerprint != expected_fingerprint:
        raise FingerprintMismatchError(
            f"数据集算例指纹 {manifest.case_fingerprint} 与当前算例 {expected_fingerprint} 不一致")

    width = manifest.arity + len(manifest.label_names)
    rows = []
    for number, line in enumerate(lines[end + 1:], start=end + 2):
        parts = line.split("\t")
        if len(parts) != width:
            raise DatasetFormatError(f"{path}:{number}: 应有 {width} 列，实际 {len(parts)} 列")
        try:
            values = np.array([float(p) for p in parts])
        except ValueError as e:
            raise DatasetFormatError(f"{path}:{number}: {e}")
        rows.append(DatasetRow(features=values[:manifest.arity], labels=values[manifest.arity:]))
    if len(rows) != manifest.row_count:
        raise DatasetFormatError(f"{path}: 清单声明 {manifest.row_count} 行，实际 {len(rows)} 行")
    return rows, manifest


def dataset_roundtrip(rows: Sequence[DatasetRow], manifest: DatasetManifest,
                      path: Union[str, Path]) -> List[DatasetRow]:
    """写入后读回"""
    write_dataset(path, rows, manifest)
    read_back, _ = read_dataset(path, expected_fingerprint=manifest.case_fingerprint)
    return read_back


def split(rows: Sequence[Any], train_fraction: float, seed: int) -> Tuple[List[Any], List[Any]]:
    """确定性随机划分训练集与验证集"""
    if not 0 < train_fraction < 1:
        raise DatasetError(f"训练集比例必须位于 (0, 1)，实际 {train_fraction}")
    n = len(rows)
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n - n_train < 1:
        raise DatasetError(f"{n} 行数据无法按比例 {train_fraction} 划分出非空的两部分")
    order = np.random.default_rng(seed).permutation(n)
    return [rows[i] for i in order[:n_train]], [rows[i] for i in order[n_train:]]


def generate_dataset(case: GridCase, sampling: SamplingConfig, sim: SimConfig, n: int,
                     seed: int, path: Optional[Union[str, Path]] = None, workers: int = 1,
                     chunk_size: int = 128) -> Tuple[List[DatasetRow], DatasetManifest]:
    """采样 → 仿真标注 → 写文件"""
    scenarios = sample_scenarios(case, sampling, n, seed)
    rows = label_scenarios(case, scenarios, sim, workers=workers, chunk_size=chunk_size,
                           contingencies=sampling.contingencies)
    manifest = build_manifest(case, sampling, sim, len(rows), seed)
    if path is not None:
        write_dataset(path, rows, manifest)
    return rows, manifest
