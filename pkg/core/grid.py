"""
电网静态模型模块
算例解析、直流潮流、运行点校核与系统惯量计算
"""
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from config.logger import get_logger
from core.exceptions import (
    CaseSchemaError, GridError, NetworkError, UnbalancedInjectionError, UnknownUnitError
)

logger = get_logger("grid")

BALANCE_TOLERANCE = 1e-6
DEFAULT_CASE_PATH = Path(__file__).resolve().parents[1] / "config" / "cases" / "ieee9_modified.yaml"


@dataclass(frozen=True)
class Bus:
    """母线"""
    id: int
    slack: bool = False


@dataclass(frozen=True)
class Line:
    """支路（直流模型下只保留电抗与热稳极限）"""
    from_bus: int
    to_bus: int
    x: float
    limit: float


@dataclass(frozen=True)
class GenGroup:
    """同一母线上完全相同的一组机组，共享一个单机出力变量"""
    bus: int
    unit_count: int
    p_min: float
    p_max: float
    c2: float
    c1: float
    c0: float
    inertia: float
    rated_mva: float
    droop: float
    governor_tc: float
    p_set: Optional[float] = None
    xd_prime: float = 0.0

    @property
    def name(self) -> str:
        return f"G{self.bus}"

    @property
    def unit_ids(self) -> List[str]:
        return [f"G{self.bus}{k}" for k in range(1, self.unit_count + 1)]

    @property
    def setpoint(self) -> float:
        """单机默认出力"""
        if self.p_set is not None:
            return self.p_set
        return 0.5 * (self.p_min + self.p_max)

    def unit_cost(self, p: float) -> float:
        """单机二次成本 $/h"""
        return self.c2 * p * p + self.c1 * p + self.c0


@dataclass(frozen=True)
class Load:
    """恒功率负荷"""
    bus: int
    p_load: float


@dataclass(frozen=True)
class GridCase:
    """算例：网络、机组组与负荷，解析后不可变"""
    base_mva: float
    f0: float
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    gen_groups: Tuple[GenGroup, ...]
    loads: Tuple[Load, ...]
    name: str = "case"
    _bus_index: Dict[int, int] = field(init=False, repr=False, compare=False)
    _unit_index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_index", {b.id: i for i, b in enumerate(self.buses)})
        units = {}
        for g, group in enumerate(self.gen_groups):
            for unit in group.unit_ids:
                units[unit] = g
        object.__setattr__(self, "_unit_index", units)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> List[int]:
        return [b.id for b in self.buses]

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.slack)

    def bus_index(self, bus: int) -> int:
        try:
            return self._bus_index[bus]
        except KeyError:
            raise GridError(f"母线不存在: {bus}")

    def line_names(self) -> List[str]:
        return [f"L{k + 1}" for k in range(len(self.lines))]

    def units(self) -> List[str]:
        """全部机组编号，按机组组顺序"""
        return [unit for group in self.gen_groups for unit in group.unit_ids]

    def group_index(self, unit: str) -> int:
        try:
            return self._unit_index[unit]
        except KeyError:
            raise UnknownUnitError(f"机组不存在: {unit}")

    def group_of(self, unit: str) -> GenGroup:
        return self.gen_groups[self.group_index(unit)]

    def credible_units(self) -> List[str]:
        """可信N-1故障集：每个发电母线的第一台机组"""
        return [group.unit_ids[0] for group in self.gen_groups]

    def slack_group_index(self) -> int:
        slack = self.slack_bus
        for g, group in enumerate(self.gen_groups):
            if group.bus == slack:
                return g
        raise GridError(f"平衡母线 {slack} 上没有机组组")

    def load_vector(self) -> np.ndarray:
        return np.array([load.p_load for load in self.loads], dtype=float)

    def unit_counts(self) -> np.ndarray:
        return np.array([group.unit_count for group in self.gen_groups], dtype=float)


@dataclass
class OperatingPoint:
    """运行点：单机出力、负荷、相角与潮流"""
    group_output: np.ndarray
    loads: np.ndarray
    angles: np.ndarray
    flows: np.ndarray

    def group_totals(self, case: GridCase) -> np.ndarray:
        return self.group_output * case.unit_counts()


@dataclass(frozen=True)
class Violation:
    """运行点约束越限"""
    constraint: str
    element: str
    magnitude: float


# ---------------------------------------------------------------- 解析

def _require(mapping: Any, key: str, path: str) -> Any:
    if not isinstance(mapping, dict):
        raise CaseSchemaError(path, "应为键值映射")
    if key not in mapping:
        raise CaseSchemaError(f"{path}.{key}" if path else key, "缺少字段")
    return mapping[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseSchemaError(path, f"应为数值，实际为 {value!r}")
    if not np.isfinite(value):
        raise CaseSchemaError(path, "数值必须有限")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseSchemaError(path, f"应为整数，实际为 {value!r}")
    return value


def _list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise CaseSchemaError(path, "应为列表")
    return value


def _parse_buses(items: list) -> Tuple[Bus, ...]:
    buses = []
    seen = set()
    for i, item in enumerate(items):
        path = f"buses[{i}]"
        bus_id = _integer(_require(item, "id", path), f"{path}.id")
        if bus_id in seen:
            raise CaseSchemaError(f"{path}.id", f"重复的母线编号 {bus_id}")
        seen.add(bus_id)
        slack = item.get("slack", False)
        if not isinstance(slack, bool):
            raise CaseSchemaError(f"{path}.slack", "应为布尔值")
        buses.append(Bus(id=bus_id, slack=slack))
    if not buses:
        raise CaseSchemaError("buses", "母线列表为空")
    n_slack = sum(1 for b in buses if b.slack)
    if n_slack != 1:
        raise CaseSchemaError("buses", f"必须恰好有一个平衡母线，实际 {n_slack} 个")
    return tuple(buses)


def _parse_lines(items: list, bus_ids: set) -> Tuple[Line, ...]:
    lines = []
    for i, item in enumerate(items):
        path = f"lines[{i}]"
        from_bus = _integer(_require(item, "from_bus", path), f"{path}.from_bus")
        to_bus = _integer(_require(item, "to_bus", path), f"{path}.to_bus")
        x = _number(_require(item, "x", path), f"{path}.x")
        limit = _number(_require(item, "limit", path), f"{path}.limit")
        for key, bus in (("from_bus", from_bus), ("to_bus", to_bus)):
            if bus not in bus_ids:
                raise CaseSchemaError(f"{path}.{key}", f"母线 {bus} 不存在")
        if from_bus == to_bus:
            raise CaseSchemaError(path, "支路首末端母线相同")
        if x <= 0:
            raise CaseSchemaError(f"{path}.x", "电抗必须大于0")
        if limit <= 0:
            raise CaseSchemaError(f"{path}.limit", "热稳极限必须大于0")
        lines.append(Line(from_bus=from_bus, to_bus=to_bus, x=x, limit=limit))
    return tuple(lines)


def _parse_groups(items: list, bus_ids: set) -> Tuple[GenGroup, ...]:
    groups = []
    seen = set()
    for i, item in enumerate(items):
        path = f"gen_groups[{i}]"
        bus = _integer(_require(item, "bus", path), f"{path}.bus")
        if bus not in bus_ids:
            raise CaseSchemaError(f"{path}.bus", f"母线 {bus} 不存在")
        if bus in seen:
            raise CaseSchemaError(f"{path}.bus", f"母线 {bus} 上已有机组组")
        seen.add(bus)
        unit_count = _integer(_require(item, "unit_count", path), f"{path}.unit_count")
        values = {
            key: _number(_require(item, key, path), f"{path}.{key}")
            for key in ("p_min", "p_max", "c2", "c1", "c0", "inertia",
                        "rated_mva", "droop", "governor_tc")
        }
        p_set = item.get("p_set")
        if p_set is not None:
            p_set = _number(p_set, f"{path}.p_set")
        xd_prime = _number(item.get("xd_prime", 0.0), f"{path}.xd_prime")

        if unit_count < 1:
            raise CaseSchemaError(f"{path}.unit_count", "机组台数至少为1")
        if not 0 <= values["p_min"] < values["p_max"]:
            raise CaseSchemaError(f"{path}.p_min", "要求 0 <= p_min < p_max")
        if values["c2"] < 0:
            raise CaseSchemaError(f"{path}.c2", "二次成本系数不能为负（成本须为凸函数）")
        for key in ("inertia", "rated_mva", "droop", "governor_tc"):
            if values[key] <= 0:
                raise CaseSchemaError(f"{path}.{key}", "必须大于0")
        if p_set is not None and not values["p_min"] <= p_set <= values["p_max"]:
            raise CaseSchemaError(f"{path}.p_set", "默认出力超出机组上下限")
        if xd_prime < 0:
            raise CaseSchemaError(f"{path}.xd_prime", "暂态电抗不能为负")
        groups.append(GenGroup(bus=bus, unit_count=unit_count, p_set=p_set,
                               xd_prime=xd_prime, **values))
    if not groups:
        raise CaseSchemaError("gen_groups", "机组组列表为空")
    return tuple(groups)


def _parse_loads(items: list, bus_ids: set) -> Tuple[Load, ...]:
    loads = []
    for i, item in enumerate(items):
        path = f"loads[{i}]"
        bus = _integer(_require(item, "bus", path), f"{path}.bus")
        if bus not in bus_ids:
            raise CaseSchemaError(f"{path}.bus", f"母线 {bus} 不存在")
        p_load = _number(_require(item, "p_load", path), f"{path}.p_load")
        if p_load < 0:
            raise CaseSchemaError(f"{path}.p_load", "负荷不能为负")
        loads.append(Load(bus=bus, p_load=p_load))
    return tuple(loads)


def _check_connected(buses: Tuple[Bus, ...], lines: Tuple[Line, ...]):
    adjacency: Dict[int, List[int]] = {b.id: [] for b in buses}
    for line in lines:
        adjacency[line.from_bus].append(line.to_bus)
        adjacency[line.to_bus].append(line.from_bus)
    start = buses[0].id
    visited = {start}
    stack = [start]
    while stack:
        bus = stack.pop()
        for nxt in adjacency[bus]:
            if nxt not in visited:
                visited.add(nxt)
                stack.append(nxt)
    if len(visited) != len(buses):
        missing = sorted(set(adjacency) - visited)
        raise CaseSchemaError("lines", f"网络不连通，孤立母线: {missing}")


def parse_case(text: str, name: str = "case") -> GridCase:
    """
    解析算例文档

    Args:
        text: YAML格式算例（system/buses/lines/gen_groups/loads 五节）
        name: 算例名称

    Returns:
        满足全部不变式的 GridCase
    """
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise CaseSchemaError("<document>", f"YAML解析失败: {e}")

    system = _require(document, "system", "")
    base_mva = _number(_require(system, "base_mva", "system"), "system.base_mva")
    f0 = _number(_require(system, "f0", "system"), "system.f0")
    if base_mva <= 0:
        raise CaseSchemaError("system.base_mva", "基准容量必须大于0")
    if f0 <= 0:
        raise CaseSchemaError("system.f0", "额定频率必须大于0")

    buses = _parse_buses(_list(_require(document, "buses", ""), "buses"))
    bus_ids = {b.id for b in buses}
    lines = _parse_lines(_list(_require(document, "lines", ""), "lines"), bus_ids)
    groups = _parse_groups(_list(_require(document, "gen_groups", ""), "gen_groups"), bus_ids)
    loads = _parse_loads(_list(_require(document, "loads", ""), "loads"), bus_ids)
    _check_connected(buses, lines)

    case = GridCase(base_mva=base_mva, f0=f0, buses=buses, lines=lines,
                    gen_groups=groups, loads=loads, name=name)
    logger.debug(f"算例 {name} 解析完成: {case.n_bus} 母线, {len(lines)} 支路, "
                 f"{len(case.units())} 台机组")
    return case


def load_case(path: Union[str, Path, None] = None) -> GridCase:
    """从文件加载算例，默认加载内置的改进9节点系统"""
    path = Path(path) if path else DEFAULT_CASE_PATH
    if not path.exists():
        raise GridError(f"算例文件不存在: {path}")
    return parse_case(path.read_text(encoding="utf-8"), name=path.stem)


def case_to_dict(case: GridCase) -> Dict[str, Any]:
    """算例转为与文件结构一致的字典"""
    groups = []
    for group in case.gen_groups:
        entry = {
            "bus": group.bus, "unit_count": group.unit_count,
            "p_min": group.p_min, "p_max": group.p_max,
            "c2": group.c2, "c1": group.c1, "c0": group.c0,
            "inertia": group.inertia, "rated_mva": group.rated_mva,
            "droop": group.droop, "governor_tc": group.governor_tc,
            "xd_prime": group.xd_prime,
        }
        if group.p_set is not None:
            entry["p_set"] = group.p_set
        groups.append(entry)
    return {
        "system": {"base_mva": case.base_mva, "f0": case.f0},
        "buses": [{"id": b.id, "slack": b.slack} for b in case.buses],
        "lines": [{"from_bus": l.from_bus, "to_bus": l.to_bus, "x": l.x, "limit": l.limit}
                  for l in case.lines],
        "gen_groups": groups,
        "loads": [{"bus": l.bus, "p_load": l.p_load} for l in case.loads],
    }


def case_fingerprint(case: GridCase) -> str:
    """算例指纹：规范化YAML的SHA-256前16位"""
    canonical = yaml.safe_dump(case_to_dict(case), sort_keys=True, default_flow_style=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- 直流潮流

def incidence_matrix(case: GridCase) -> np.ndarray:
    """支路-母线关联矩阵，首端+1，末端-1"""
    a = np.zeros((len(case.lines), case.n_bus))
    for k, line in enumerate(case.lines):
        a[k, case.bus_index(line.from_bus)] = 1.0
        a[k, case.bus_index(line.to_bus)] = -1.0
    return a


def line_susceptances(case: GridCase) -> np.ndarray:
    """支路电纳，MW/rad"""
    return np.array([case.base_mva / line.x for line in case.lines])


def susceptance_matrix(case: GridCase) -> np.ndarray:
    """节点电纳矩阵 B（MW/rad），满足 P = B·θ"""
    a = incidence_matrix(case)
    return a.T @ (line_susceptances(case)[:, None] * a)


def line_flows(case: GridCase, angles: np.ndarray) -> np.ndarray:
    """按 P_k = (θ_from − θ_to)/x_k 计算支路潮流（MW）"""
    return line_susceptances(case) * (incidence_matrix(case) @ angles)


def dc_power_flow(case: GridCase, injections: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    直流潮流

    Args:
        case: 算例
        injections: 各母线净注入功率（MW），按母线顺序

    Returns:
        (各母线相角 rad, 各支路潮流 MW)，平衡母线相角为0
    """
    inj = np.asarray(injections, dtype=float)
    if inj.shape != (case.n_bus,):
        raise NetworkError(f"注入向量长度应为 {case.n_bus}，实际 {inj.shape}")
    mismatch = float(inj.sum())
    if abs(mismatch) > BALANCE_TOLERANCE:
        raise UnbalancedInjectionError(f"注入功率之和为 {mismatch:.6g} MW，不平衡")

    slack = case.bus_index(case.slack_bus)
    keep = [i for i in range(case.n_bus) if i != slack]
    b = susceptance_matrix(case)
    angles = np.zeros(case.n_bus)
    if keep:
        try:
            angles[keep] = np.linalg.solve(b[np.ix_(keep, keep)], inj[keep])
        except np.linalg.LinAlgError:
            raise NetworkError("电纳矩阵奇异，网络可能不连通")
    return angles, line_flows(case, angles)


def bus_injections(case: GridCase, group_output: Sequence[float],
                   loads: Sequence[float]) -> np.ndarray:
    """由单机出力与负荷计算各母线净注入"""
    inj = np.zeros(case.n_bus)
    for group, p in zip(case.gen_groups, group_output):
        inj[case.bus_index(group.bus)] += group.unit_count * float(p)
    for load, p in zip(case.loads, loads):
        inj[case.bus_index(load.bus)] -= float(p)
    return inj


def operating_point(case: GridCase, group_output: Sequence[float],
                    loads: Optional[Sequence[float]] = None) -> OperatingPoint:
    """由调度结果构造完整运行点"""
    output = np.asarray(group_output, dtype=float)
    load_values = case.load_vector() if loads is None else np.asarray(loads, dtype=float)
    angles, flows = dc_power_flow(case, bus_injections(case, output, load_values))
    return OperatingPoint(group_output=output, loads=load_values, angles=angles, flows=flows)


def rebalance_slack(case: GridCase, group_output: Sequence[float],
                    loads: Sequence[float]) -> np.ndarray:
    """平衡母线机组组承担功率缺额，返回新的单机出力向量"""
    output = np.array(group_output, dtype=float)
    g = case.slack_group_index()
    counts = case.unit_counts()
    others = float(np.dot(np.delete(output, g), np.delete(counts, g)))
    output[g] = (float(np.sum(loads)) - others) / counts[g]
    return output


def default_operating_point(case: GridCase,
                            load_scale: Union[float, Sequence[float]] = 1.0) -> OperatingPoint:
    """默认运行点：各组按 p_set 出力，平衡母线承担直流无损模型下的缺额"""
    loads = case.load_vector() * np.asarray(load_scale, dtype=float)
    output = rebalance_slack(case, [group.setpoint for group in case.gen_groups], loads)
    return operating_point(case, output, loads)


# ---------------------------------------------------------------- 校核与惯量

def check_operating_point(case: GridCase, op: OperatingPoint,
                          tolerance: float = BALANCE_TOLERANCE) -> List[Violation]:
    """
    校核运行点是否满足功率平衡、潮流方程、机组出力与支路热稳约束

    Returns:
        越限列表，为空表示全部满足
    """
    violations: List[Violation] = []

    for group, p in zip(case.gen_groups, op.group_output):
        if p < group.p_min - tolerance:
            violations.append(Violation("generator_limit", group.name, float(group.p_min - p)))
        elif p > group.p_max + tolerance:
            violations.append(Violation("generator_limit", group.name, float(p - group.p_max)))

    slack = case.bus_index(case.slack_bus)
    if abs(op.angles[slack]) > tolerance:
        violations.append(Violation("slack_angle", f"B{case.slack_bus}", float(abs(op.angles[slack]))))

    expected = line_flows(case, op.angles)
    for name, line, flow, exp in zip(case.line_names(), case.lines, op.flows, expected):
        if abs(flow - exp) > tolerance:
            violations.append(Violation("flow_equation", name, float(abs(flow - exp))))
        if abs(flow) > line.limit + tolerance:
            violations.append(Violation("line_limit", name, float(abs(flow) - line.limit)))

    net_out = incidence_matrix(case).T @ op.flows
    mismatch = bus_injections(case, op.group_output, op.loads) - net_out
    for bus, value in zip(case.bus_ids, mismatch):
        if abs(value) > tolerance:
            violations.append(Violation("nodal_balance", f"B{bus}", float(abs(value))))

    return violations


def system_inertia(case: GridCase, online_units: Iterable[str]) -> float:
    """
    系统等效惯量 H_sys = Σ H_i·S_i / P_base（秒，系统基准）

    Args:
        online_units: 在线机组编号集合
    """
    units = set(online_units)
    if not units:
        raise GridError("在线机组集合为空")
    total = 0.0
    for unit in sorted(units):
        group = case.group_of(unit)
        total += group.inertia * group.rated_mva
    return total / case.base_mva


def post_trip_inertia(case: GridCase, tripped_unit: str) -> float:
    """切除指定机组后的系统惯量"""
    remaining = [u for u in case.units() if u != tripped_unit]
    case.group_index(tripped_unit)
    if not remaining:
        raise GridError("切机后没有剩余在线机组")
    return system_inertia(case, remaining)
