"""
多机频率动态仿真模块
摇摆方程 + 调速器下垂一次调频的降阶机电模型，四阶龙格-库塔定步长积分
"""
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.logger import get_logger
from core.exceptions import ConfigError, NetworkError, SimulationAbortedError, SimulationError
from core.grid import GridCase, OperatingPoint, check_operating_point, post_trip_inertia

logger = get_logger("dynamics")

COI = "coi"
BusKey = Union[int, str]


class MeasurementRule(Enum):
    """频率指标测量位置"""
    DISTURBANCE_BUS = "disturbance_bus"
    COI = "coi"


@dataclass
class SimConfig:
    """仿真配置"""
    dt: float = 0.001
    horizon: float = 20.0
    event_time: float = 1.0
    rocof_window: float = 0.167  # 60Hz下10个周波
    measurement_bus_rule: MeasurementRule = MeasurementRule.DISTURBANCE_BUS
    f_min: float = 50.0
    f_max: float = 70.0

    def __post_init__(self):
        if isinstance(self.measurement_bus_rule, str):
            self.measurement_bus_rule = MeasurementRule(self.measurement_bus_rule)

    def validate(self):
        if self.dt <= 0:
            raise ConfigError("仿真步长必须大于0")
        if self.rocof_window <= 0:
            raise ConfigError("RoCoF测量窗口必须大于0")
        if self.horizon < 5 * self.rocof_window:
            raise ConfigError("仿真时长至少为RoCoF窗口的5倍")
        if not 0 <= self.event_time < self.horizon:
            raise ConfigError("切机时刻必须位于仿真时段内")
        if not self.f_min < self.f_max:
            raise ConfigError("频率保护上下限无效")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def event_index(self) -> int:
        return int(round(self.event_time / self.dt))


@dataclass
class MachineState:
    """单台机组状态（仿真结束时刻）"""
    unit_id: str
    rotor_angle: float
    frequency: float
    mechanical_power: float
    governor_state: float


@dataclass
class FrequencyTrace:
    """切机后的频率轨迹"""
    times: np.ndarray
    machine_freq: Dict[str, np.ndarray]
    bus_freq: Dict[int, np.ndarray]
    coi: np.ndarray
    event_time: float
    tripped_unit: str
    disturbance_bus: int
    dt: float
    f0: float
    final_states: List[MachineState] = field(default_factory=list)

    @property
    def event_index(self) -> int:
        return int(round(self.event_time / self.dt))

    def series(self, bus: BusKey) -> np.ndarray:
        if bus == COI:
            return self.coi
        try:
            return self.bus_freq[bus]
        except KeyError:
            raise SimulationError(f"轨迹中不存在母线 {bus}")


@dataclass(frozen=True)
class FrequencyMetrics:
    """频率指标：最陡窗口斜率与最低频率"""
    rocof: float
    nadir: float
    bus: BusKey


@dataclass
class _ReducedNetwork:
    """切机后网络在机组内节点上的 Kron 化简"""
    groups: List[int]
    counts: np.ndarray
    sync: np.ndarray          # P_e = sync·δ + load_map·P_load
    load_map: np.ndarray
    bus_weights: np.ndarray   # 母线频率 = Σ w·机组频率


def _nearest_machine_buses(adjacency: Dict[int, List[Tuple[int, float]]], hosts: Dict[int, List[int]],
                           source: int) -> Dict[int, float]:
    """从 source 出发的最短电抗路径，路径止于遇到的第一个发电机母线"""
    best = {source: 0.0}
    heap = [(0.0, source)]
    reached: Dict[int, float] = {}
    while heap:
        x, node = heapq.heappop(heap)
        if x > best[node] or node in reached:
            continue
        if node in hosts:
            reached[node] = x
            continue
        for nxt, x_line in adjacency[node]:
            candidate = x + x_line
            if candidate < best.get(nxt, math.inf):
                best[nxt] = candidate
                heapq.heappush(heap, (candidate, nxt))
    return reached


def _bus_weights(case: GridCase, groups: List[int], counts: Sequence[int]) -> np.ndarray:
    """
    母线频率权重
    发电机母线取本母线在线机组频率的惯量(H·S)加权平均；
    其余母线取相邻机组，权重为 H·S 除以最短路径电抗，归一化
    """
    nb = case.n_bus
    inertia = np.array([case.gen_groups[g].inertia * case.gen_groups[g].rated_mva * counts[g]
                        for g in groups])
    hosts: Dict[int, List[int]] = {}
    for m, g in enumerate(groups):
        hosts.setdefault(case.bus_index(case.gen_groups[g].bus), []).append(m)
    adjacency: Dict[int, List[Tuple[int, float]]] = {i: [] for i in range(nb)}
    for line in case.lines:
        i, j = case.bus_index(line.from_bus), case.bus_index(line.to_bus)
        adjacency[i].append((j, line.x))
        adjacency[j].append((i, line.x))

    weights = np.zeros((nb, len(groups)))
    for bus in range(nb):
        if bus in hosts:
            machines = hosts[bus]
            weights[bus, machines] = inertia[machines] / inertia[machines].sum()
            continue
        reached = _nearest_machine_buses(adjacency, hosts, bus)
        if not reached:
            raise NetworkError(f"母线 {case.bus_ids[bus]} 与在线机组不连通")
        for host, x in reached.items():
            machines = hosts[host]
            weights[bus, machines] = inertia[machines] / x
        weights[bus] /= weights[bus].sum()
    return weights


def _reduce_network(case: GridCase, counts: Sequence[int]) -> _ReducedNetwork:
    groups = [g for g, n in enumerate(counts) if n > 0]
    if not groups:
        raise SimulationError("没有剩余在线机组")

    nb = case.n_bus
    internal = [g for g in groups if case.gen_groups[g].xd_prime > 0]
    n_nodes = nb + len(internal)
    lap = np.zeros((n_nodes, n_nodes))

    def connect(i: int, j: int, b: float):
        lap[i, i] += b
        lap[j, j] += b
        lap[i, j] -= b
        lap[j, i] -= b

    for line in case.lines:
        connect(case.bus_index(line.from_bus), case.bus_index(line.to_bus), case.base_mva / line.x)

    machine_nodes = []
    next_node = nb
    for g in groups:
        group = case.gen_groups[g]
        bus = case.bus_index(group.bus)
        if group.xd_prime > 0:
            # n台并联机组的暂态电抗折算到系统基准后的电纳 S·n/x'd
            connect(bus, next_node, group.rated_mva * counts[g] / group.xd_prime)
            machine_nodes.append(next_node)
            next_node += 1
        else:
            machine_nodes.append(bus)

    machine_set = set(machine_nodes)
    others = [i for i in range(n_nodes) if i not in machine_set]
    load_inj = np.zeros((n_nodes, len(case.loads)))
    for j, load in enumerate(case.loads):
        load_inj[case.bus_index(load.bus), j] = 1.0

    l_mm = lap[np.ix_(machine_nodes, machine_nodes)]
    if others:
        l_mn = lap[np.ix_(machine_nodes, others)]
        l_nn = lap[np.ix_(others, others)]
        l_nm = lap[np.ix_(others, machine_nodes)]
        try:
            x_nm = np.linalg.solve(l_nn, l_nm)
            x_nl = np.linalg.solve(l_nn, load_inj[others])
        except np.linalg.LinAlgError:
            raise NetworkError("网络化简失败：存在与机组不连通的母线")
        sync = l_mm - l_mn @ x_nm
        load_map = load_inj[machine_nodes] - l_mn @ x_nl
    else:
        sync = l_mm.copy()
        load_map = load_inj[machine_nodes]

    return _ReducedNetwork(groups=groups, counts=np.asarray(counts, dtype=float)[groups],
                           sync=sync, load_map=load_map,
                           bus_weights=_bus_weights(case, groups, counts))


def _weighted(deviation: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """沿最后一维逐元素加权求和（结果与批大小无关）"""
    return (deviation * weights).sum(axis=-1)


def _windowed_min_slope(post: np.ndarray, n_window: int, dt: float) -> np.ndarray:
    if n_window < 2:
        raise SimulationError("RoCoF窗口至少为2个仿真步长")
    if n_window > post.shape[0] - 1:
        raise SimulationError("RoCoF窗口超过切机后轨迹长度")
    slopes = (post[n_window:] - post[:-n_window]) / (n_window * dt)
    return slopes.min(axis=0)


@dataclass
class BatchTrajectory:
    """同一故障下多个运行点的批量仿真结果"""
    case: GridCase
    config: SimConfig
    tripped_unit: str
    network: _ReducedNetwork
    inertia: np.ndarray                # 各机组 M = 2HS/f0, MW·s/Hz
    deviation: np.ndarray              # (切机后步数+1, 批, 机组) 频率偏差 Hz
    final_delta: np.ndarray
    final_mechanical: np.ndarray
    final_governor: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.deviation.shape[1]

    @property
    def disturbance_bus(self) -> int:
        return self.case.group_of(self.tripped_unit).bus

    def measurement_bus(self) -> BusKey:
        if self.config.measurement_bus_rule == MeasurementRule.COI:
            return COI
        return self.disturbance_bus

    def post_event(self, bus: BusKey) -> np.ndarray:
        """切机时刻起的频率序列 (步数, 批)"""
        f0 = self.case.f0
        if bus == COI:
            return f0 + _weighted(self.deviation, self.inertia / self.inertia.sum())
        index = self.case.bus_index(bus)
        return f0 + _weighted(self.deviation, self.network.bus_weights[index])

    def metrics(self, bus: Optional[BusKey] = None) -> List[FrequencyMetrics]:
        bus = self.measurement_bus() if bus is None else bus
        post = self.post_event(bus)
        n_window = int(round(self.config.rocof_window / self.config.dt))
        rocof = _windowed_min_slope(post, n_window, self.config.dt)
        nadir = post.min(axis=0)
        return [FrequencyMetrics(rocof=float(r), nadir=float(n), bus=bus)
                for r, n in zip(rocof, nadir)]

    def trace(self, i: int) -> FrequencyTrace:
        cfg = self.config
        f0 = self.case.f0
        k_e = cfg.event_index
        n_full = cfg.steps + 1

        def full(post: np.ndarray) -> np.ndarray:
            out = np.full(n_full, f0)
            out[k_e:] = post
            return out

        dev = self.deviation[:, i, :]
        machine_freq: Dict[str, np.ndarray] = {}
        final_states: List[MachineState] = []
        for m, g in enumerate(self.network.groups):
            series = full(f0 + dev[:, m])
            n_rem = self.network.counts[m]
            for unit in self.case.gen_groups[g].unit_ids:
                if unit == self.tripped_unit:
                    continue
                machine_freq[unit] = series
                final_states.append(MachineState(
                    unit_id=unit,
                    rotor_angle=float(self.final_delta[i, m]),
                    frequency=float(series[-1]),
                    mechanical_power=float(self.final_mechanical[i, m] / n_rem),
                    governor_state=float(self.final_governor[i, m] / n_rem),
                ))
        bus_freq = {
            bus: full(f0 + _weighted(dev, self.network.bus_weights[b]))
            for b, bus in enumerate(self.case.bus_ids)
        }
        coi = full(f0 + _weighted(dev, self.inertia / self.inertia.sum()))
        return FrequencyTrace(
            times=np.arange(n_full) * cfg.dt,
            machine_freq=machine_freq,
            bus_freq=bus_freq,
            coi=coi,
            event_time=cfg.event_time,
            tripped_unit=self.tripped_unit,
            disturbance_bus=self.disturbance_bus,
            dt=cfg.dt,
            f0=f0,
            final_states=final_states,
        )


def simulate_trips(case: GridCase, ops: Sequence[OperatingPoint], tripped_unit: str,
                   config: Optional[SimConfig] = None, check: bool = True) -> BatchTrajectory:
    """
    批量仿真：多个运行点在同一台机组切除后的频率响应

    Args:
        case: 算例
        ops: 运行点列表（切机前稳态）
        tripped_unit: 切除机组编号
        config: 仿真配置
        check: 是否先校核运行点可行性

    Returns:
        BatchTrajectory
    """
    config = config or SimConfig()
    config.validate()
    if not ops:
        raise SimulationError("运行点列表为空")
    g_trip = case.group_index(tripped_unit)

    if check:
        for i, op in enumerate(ops):
            violations = check_operating_point(case, op)
            if violations:
                raise SimulationError(f"第 {i} 个初始运行点不可行: {violations[0]}")

    counts = [group.unit_count for group in case.gen_groups]
    counts[g_trip] -= 1
    net = _reduce_network(case, counts)
    groups = [case.gen_groups[g] for g in net.groups]
    f0 = case.f0

    per_unit = np.array([op.group_output for op in ops], dtype=float)
    if np.any(per_unit[:, g_trip] < 0):
        raise SimulationError(f"切除机组 {tripped_unit} 出力为负")
    loads = np.array([op.loads for op in ops], dtype=float)
    angles = np.array([op.angles for op in ops], dtype=float)

    rated = np.array([grp.rated_mva for grp in groups])
    n_rem = net.counts
    inertia = 2.0 * np.array([grp.inertia for grp in groups]) * rated * n_rem / f0
    gain = rated * n_rem / (np.array([grp.droop for grp in groups]) * f0)
    tg = np.array([grp.governor_tc for grp in groups])
    p_lo = np.array([grp.p_min for grp in groups]) * n_rem
    p_hi = np.array([grp.p_max for grp in groups]) * n_rem

    p_unit = per_unit[:, net.groups]
    pm0 = p_unit * n_rem
    bus_cols = [case.bus_index(grp.bus) for grp in groups]
    xd = np.array([grp.xd_prime for grp in groups])
    # 切机前内电势相角：端电压相角 + 单机出力 · x'd / S
    delta = angles[:, bus_cols] + p_unit * xd / rated
    pe_const = _weighted(loads[:, None, :], net.load_map[None, :, :])
    sync = net.sync[None, :, :]

    two_pi = 2.0 * math.pi
    lo_dev = config.f_min - f0
    hi_dev = config.f_max - f0

    def derivative(d: np.ndarray, w: np.ndarray, g: np.ndarray):
        pe = _weighted(d[:, None, :], sync) + pe_const
        pm = np.clip(pm0 + g, p_lo, p_hi)
        return two_pi * w, (pm - pe) / inertia, (-gain * w - g) / tg

    h = config.dt
    h2 = 0.5 * h
    h6 = h / 6.0
    n_post = config.steps - config.event_index
    batch = per_unit.shape[0]
    deviation = np.zeros((n_post + 1, batch, len(groups)))
    w = np.zeros((batch, len(groups)))
    g = np.zeros((batch, len(groups)))
    d = delta

    for step in range(n_post):
        a1, b1, c1 = derivative(d, w, g)
        a2, b2, c2 = derivative(d + h2 * a1, w + h2 * b1, g + h2 * c1)
        a3, b3, c3 = derivative(d + h2 * a2, w + h2 * b2, g + h2 * c2)
        a4, b4, c4 = derivative(d + h * a3, w + h * b3, g + h * c3)
        d = d + h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w = w + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        g = g + h6 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        if not np.all((w > lo_dev) & (w < hi_dev)):
            row, col = np.argwhere(~((w > lo_dev) & (w < hi_dev)))[0]
            t = config.event_time + (step + 1) * h
            machine = groups[col].name
            raise SimulationAbortedError(
                f"积分发散: t={t:.3f}s 机组组 {machine} 频率 {f0 + w[row, col]:.3f}Hz "
                f"超出 [{config.f_min}, {config.f_max}]Hz",
                time=t, machine=machine, frequency=float(f0 + w[row, col]))
        deviation[step + 1] = w

    logger.debug(f"切除 {tripped_unit}: 完成 {batch} 个运行点的仿真, {n_post} 步")
    return BatchTrajectory(
        case=case, config=config, tripped_unit=tripped_unit, network=net,
        inertia=inertia, deviation=deviation, final_delta=d,
        final_mechanical=np.clip(pm0 + g, p_lo, p_hi), final_governor=g,
    )


def simulate_trip(case: GridCase, op: OperatingPoint, tripped_unit: str,
                  config: Optional[SimConfig] = None) -> FrequencyTrace:
    """单个运行点切机仿真"""
    return simulate_trips(case, [op], tripped_unit, config).trace(0)


def measure_rocof(trace: FrequencyTrace, bus: BusKey, window: float) -> float:
    """
    切机后最陡（最负）的窗口平均频率斜率，Hz/s

    Args:
        trace: 频率轨迹
        bus: 母线编号或 "coi"
        window: 窗口长度（秒），不小于2个步长
    """
    series = trace.series(bus)
    n_window = int(round(window / trace.dt))
    return float(_windowed_min_slope(series[trace.event_index:], n_window, trace.dt))


def measure_nadir(trace: FrequencyTrace, bus: BusKey) -> float:
    """切机后的最低频率，Hz"""
    return float(trace.series(bus)[trace.event_index:].min())


def measure_metrics(trace: FrequencyTrace, bus: BusKey, window: float) -> FrequencyMetrics:
    return FrequencyMetrics(rocof=measure_rocof(trace, bus, window),
                            nadir=measure_nadir(trace, bus), bus=bus)


def rocof_series(trace: FrequencyTrace, bus: BusKey, window: float) -> Tuple[np.ndarray, np.ndarray]:
    """窗口斜率随窗口起始时刻的变化，用于绘制RoCoF曲线"""
    n_window = int(round(window / trace.dt))
    k_e = trace.event_index
    series = trace.series(bus)
    if n_window < 2:
        raise SimulationError("RoCoF窗口至少为2个仿真步长")
    if n_window > len(series) - 1 - k_e:
        raise SimulationError("RoCoF窗口超过切机后轨迹长度")
    slopes = (series[n_window:] - series[:-n_window]) / (n_window * trace.dt)
    return trace.times[:-n_window], slopes


def analytic_initial_rocof(case: GridCase, op: OperatingPoint, tripped_unit: str) -> float:
    """
    摇摆方程线性化的初始RoCoF: −f0·P_loss / (2·H_sys·P_base)，H_sys 为切机后惯量
    """
    p_loss = float(op.group_output[case.group_index(tripped_unit)])
    h_post = post_trip_inertia(case, tripped_unit)
    return -case.f0 * p_loss / (2.0 * h_post * case.base_mva)


def export_trace(trace: FrequencyTrace, path: Union[str, Path]) -> Path:
    """导出列式文本：时间 + 各母线频率"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buses = sorted(trace.bus_freq)
    columns = [trace.times] + [trace.bus_freq[b] for b in buses]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(["time"] + [f"bus_{b}" for b in buses]) + "\n")
        for row in zip(*columns):
            f.write("\t".join(repr(float(v)) for v in row) + "\n")
    return path
