"""
最优潮流模型
T-OPF（传统直流OPF）、L-FCOPF（线性RoCoF约束）、DNN-FCOPF（嵌入神经网络频率约束）
"""
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml

from config.logger import get_logger
from core.exceptions import (
    ConfigError, DispatchError, DispatchVerificationError, FingerprintMismatchError
)
from core.grid import (
    GridCase, OperatingPoint, case_fingerprint, check_operating_point, post_trip_inertia
)
from core.milp_solver import (
    MilpProblem, ProblemBuilder, Sense, Solution, SolveStatus, SolverConfig, piecewise_linearize,
    solve_milp
)
from core.predictor import MlpModel, forward
from core.relu_encoding import (
    BoundMethod, BoundsConfig, InputBox, MilpFragment, NeuronBounds, encode_network,
    encoding_stats, propagate_bounds
)

logger = get_logger("opf")


class ModelKind(Enum):
    """调度模型类型"""
    TOPF = "topf"
    LFCOPF = "lfcopf"
    DNNFCOPF = "dnnfcopf"

    @property
    def label(self) -> str:
        return {"topf": "T-OPF", "lfcopf": "L-FCOPF", "dnnfcopf": "DNN-FCOPF"}[self.value]


@dataclass
class FcopfConfig:
    """频率约束阈值与可信故障集"""
    rocof_threshold: float = -0.5
    nadir_threshold: float = 59.5
    contingencies: Optional[List[str]] = None
    pwl_segments: int = 10

    def validate(self, f0: float = 60.0):
        if self.rocof_threshold >= 0:
            raise ConfigError("RoCoF阈值必须为负")
        if not 0 < self.nadir_threshold < f0:
            raise ConfigError(f"最低频率阈值必须位于 (0, {f0})")
        if self.pwl_segments < 1:
            raise ConfigError("分段数至少为1")

    def units(self, case: GridCase) -> List[str]:
        units = list(self.contingencies or case.credible_units())
        for unit in units:
            case.group_index(unit)
        return units


@dataclass
class OpfModel:
    """已构建的调度模型"""
    kind: ModelKind
    case: GridCase
    problem: MilpProblem
    loads: np.ndarray
    output_vars: List[str]
    angle_vars: List[str]
    flow_vars: List[str]
    cost_vars: List[str]
    contingencies: List[str] = field(default_factory=list)
    rocof_coefficients: Dict[str, float] = field(default_factory=dict)
    fragments: Dict[str, MilpFragment] = field(default_factory=dict)
    predictor: Optional[MlpModel] = None
    thresholds: Optional[FcopfConfig] = None
    build_time: float = 0.0

    def heuristic(self, values: np.ndarray) -> Optional[np.ndarray]:
        """节点LP解的出力不变，各网络片段用前向计算补全"""
        if not self.fragments:
            return None
        problem = self.problem
        candidate = np.array(values, dtype=float)
        lookup = {name: candidate[problem.index(name)] for name in self.output_vars}
        for fragment in self.fragments.values():
            x = fragment.input_values(lookup)
            for name, value in fragment.complete(x).items():
                candidate[problem.index(name)] = value
        return candidate


@dataclass
class DispatchResult:
    """调度结果"""
    kind: ModelKind
    group_output: np.ndarray
    loads: np.ndarray
    angles: np.ndarray
    flows: np.ndarray
    total_cost: float
    quadratic_cost: float
    status: SolveStatus
    solve_time: float = 0.0
    nodes: int = 0
    predicted: Optional[Dict[str, Dict[str, float]]] = None
    linear_rocof: Optional[Dict[str, float]] = None

    def operating_point(self) -> OperatingPoint:
        return OperatingPoint(group_output=self.group_output.copy(), loads=self.loads.copy(),
                              angles=self.angles.copy(), flows=self.flows.copy())

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = {
            "kind": self.kind.value,
            "status": self.status.value,
            "group_output": self.group_output.tolist(),
            "loads": self.loads.tolist(),
            "angles": self.angles.tolist(),
            "flows": self.flows.tolist(),
            "total_cost": float(self.total_cost),
            "quadratic_cost": float(self.quadratic_cost),
            "nodes": int(self.nodes),
            "predicted": self.predicted,
            "linear_rocof": self.linear_rocof,
        }
        if include_timings:
            data["solve_time"] = float(self.solve_time)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DispatchResult":
        try:
            return cls(
                kind=ModelKind(data["kind"]),
                group_output=np.array(data["group_output"], dtype=float),
                loads=np.array(data["loads"], dtype=float),
                angles=np.array(data["angles"], dtype=float),
                flows=np.array(data["flows"], dtype=float),
                total_cost=float(data["total_cost"]),
                quadratic_cost=float(data["quadratic_cost"]),
                status=SolveStatus(data["status"]),
                solve_time=float(data.get("solve_time", 0.0)),
                nodes=int(data.get("nodes", 0)),
                predicted=data.get("predicted"),
                linear_rocof=data.get("linear_rocof"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DispatchError(f"调度结果文件内容错误: {e}")


def rocof_coefficient(case: GridCase, unit: str) -> float:
    """切除单台机组后初始RoCoF对该机组出力的线性系数 −f0/(2·H_post·S_base)"""
    return -case.f0 / (2.0 * post_trip_inertia(case, unit) * case.base_mva)


def linear_rocof(case: GridCase, group_output: Sequence[float], unit: str) -> float:
    return rocof_coefficient(case, unit) * float(group_output[case.group_index(unit)])


def _base_builder(case: GridCase, loads: np.ndarray, segments: int, name: str) -> Dict[str, Any]:
    builder = ProblemBuilder(name)
    outputs, angles, flows, costs = [], [], [], []
    for group in case.gen_groups:
        outputs.append(builder.add_variable(f"P_{group.name}", group.p_min, group.p_max))
    for bus in case.buses:
        bound = 0.0 if bus.slack else math.pi
        angles.append(builder.add_variable(f"theta_B{bus.id}", -bound, bound))
    for line_name, line in zip(case.line_names(), case.lines):
        flows.append(builder.add_variable(f"flow_{line_name}", -line.limit, line.limit))

    for g, group in enumerate(case.gen_groups):
        pwl = piecewise_linearize(group.c2, group.c1, group.c0, group.p_min, group.p_max, segments)
        n = group.unit_count
        cost = builder.add_variable(f"cost_{group.name}", n * float(pwl.costs.min()),
                                    n * float(pwl.costs.max()), cost=1.0)
        costs.append(cost)
        for k, (slope, intercept) in enumerate(pwl.secants()):
            # 上镜图: cost ≥ n·(slope·P + intercept)
            builder.add_constraint({cost: 1.0, outputs[g]: -n * slope}, Sense.GE, n * intercept,
                                   name=f"secant_{group.name}_{k}")

    balance: Dict[int, Dict[str, float]] = {bus.id: {} for bus in case.buses}
    rhs = {bus.id: 0.0 for bus in case.buses}
    for g, group in enumerate(case.gen_groups):
        balance[group.bus][outputs[g]] = float(group.unit_count)
    for load, p in zip(case.loads, loads):
        rhs[load.bus] += float(p)
    for flow, line in zip(flows, case.lines):
        balance[line.from_bus][flow] = balance[line.from_bus].get(flow, 0.0) - 1.0
        balance[line.to_bus][flow] = balance[line.to_bus].get(flow, 0.0) + 1.0
    for bus in case.buses:
        builder.add_constraint(balance[bus.id], Sense.EQ, rhs[bus.id], name=f"balance_B{bus.id}")

    for flow, line_name, line in zip(flows, case.line_names(), case.lines):
        b = case.base_mva / line.x
        builder.add_constraint({flow: 1.0, f"theta_B{line.from_bus}": -b, f"theta_B{line.to_bus}": b},
                               Sense.EQ, 0.0, name=f"flowdef_{line_name}")
    return {"builder": builder, "outputs": outputs, "angles": angles, "flows": flows, "costs": costs}


def _loads(case: GridCase, loads: Optional[Sequence[float]]) -> np.ndarray:
    values = case.load_vector() if loads is None else np.asarray(loads, dtype=float)
    if values.shape != (len(case.loads),) or np.any(values < 0):
        raise DispatchError("负荷向量维度错误或含负值")
    return values


def _finish(kind: ModelKind, case: GridCase, parts: Dict[str, Any], loads: np.ndarray,
            start: float, **extra) -> OpfModel:
    problem = parts["builder"].build()
    model = OpfModel(kind=kind, case=case, problem=problem, loads=loads,
                     output_vars=parts["outputs"], angle_vars=parts["angles"],
                     flow_vars=parts["flows"], cost_vars=parts["costs"],
                     build_time=time.perf_counter() - start, **extra)
    logger.info(f"{kind.label} 模型构建完成: {problem.lp.n_vars} 变量, {problem.lp.n_rows} 约束, "
                f"{len(problem.binaries)} 个0/1变量")
    return model


def build_topf(case: GridCase, segments: int = 10,
               loads: Optional[Sequence[float]] = None) -> OpfModel:
    """传统直流OPF：分段线性成本、节点功率平衡、支路潮流与热稳极限"""
    start = time.perf_counter()
    loads = _loads(case, loads)
    parts = _base_builder(case, loads, segments, "topf")
    return _finish(ModelKind.TOPF, case, parts, loads, start)


def build_lfcopf(case: GridCase, config: FcopfConfig, segments: int = 10,
                 loads: Optional[Sequence[float]] = None) -> OpfModel:
    """T-OPF + 每个可信故障的线性化RoCoF约束"""
    start = time.perf_counter()
    config.validate(case.f0)
    loads = _loads(case, loads)
    parts = _base_builder(case, loads, segments, "lfcopf")
    builder = parts["builder"]
    units = config.units(case)
    coefficients = {}
    for unit in units:
        coef = rocof_coefficient(case, unit)
        coefficients[unit] = coef
        g = case.group_index(unit)
        builder.add_constraint({parts["outputs"][g]: coef}, Sense.GE, config.rocof_threshold,
                               name=f"rocof_{unit}")
    return _finish(ModelKind.LFCOPF, case, parts, loads, start, contingencies=units,
                   rocof_coefficients=coefficients, thresholds=config)


def build_dnn_fcopf(case: GridCase, model: MlpModel, config: FcopfConfig, segments: int = 10,
                    loads: Optional[Sequence[float]] = None,
                    bounds: Optional[Union[NeuronBounds, Dict[str, NeuronBounds]]] = None,
                    bounds_config: Optional[BoundsConfig] = None) -> OpfModel:
    """
    T-OPF + 每个可信故障嵌入一份预测器MILP编码，并约束预测的 RoCoF 与最低频率

    Args:
        case: 算例
        model: 与算例指纹一致的预测器
        config: 阈值与故障集
        segments: 成本分段数
        loads: 负荷（默认算例负荷）
        bounds: 预先计算的界；为空时按每个实例的输入区间传播
        bounds_config: 界传播方法
    """
    start = time.perf_counter()
    config.validate(case.f0)
    model.require_frequency_outputs()
    fingerprint = case_fingerprint(case)
    if model.fingerprint != fingerprint:
        raise FingerprintMismatchError(f"预测器训练所用算例指纹 {model.fingerprint or '<空>'} "
                                       f"与当前算例 {fingerprint} 不一致")
    loads = _loads(case, loads)
    trained_units = list(model.contingencies or case.credible_units())
    units = config.units(case)
    missing = [u for u in units if u not in trained_units]
    if missing:
        raise DispatchError(f"预测器未覆盖故障 {missing}")
    expected = len(case.gen_groups) + len(case.loads) + len(trained_units)
    if model.dims[0] != expected:
        raise DispatchError(f"预测器输入维度 {model.dims[0]} 与算例特征数 {expected} 不一致")

    bounds_config = bounds_config or BoundsConfig()
    parts = _base_builder(case, loads, segments, "dnnfcopf")
    builder = parts["builder"]
    inputs = list(parts["outputs"]) + [float(p) for p in loads]
    fragments = {}
    for unit in units:
        one_hot = [1.0 if u == unit else 0.0 for u in trained_units]
        if isinstance(bounds, dict):
            unit_bounds = bounds[unit]
        elif bounds is not None:
            unit_bounds = bounds
        else:
            box = InputBox.for_instance(case, loads, one_hot)
            unit_bounds = propagate_bounds(model, box, method=bounds_config.method)
        fragment = encode_network(model, unit_bounds, inputs, one_hot, prefix=f"dnn_{unit}",
                                  margin=bounds_config.margin)
        builder.absorb(fragment.variables, fragment.rows)
        nadir_var, rocof_var = fragment.outputs
        builder.add_constraint({rocof_var: 1.0}, Sense.GE, config.rocof_threshold,
                               name=f"rocof_limit_{unit}")
        builder.add_constraint({nadir_var: 1.0}, Sense.GE, config.nadir_threshold,
                               name=f"nadir_limit_{unit}")
        fragments[unit] = fragment
        logger.debug(f"故障 {unit} 编码: {encoding_stats(fragment)}")
    return _finish(ModelKind.DNNFCOPF, case, parts, loads, start, contingencies=units,
                   fragments=fragments, predictor=model, thresholds=config)


def build_model(kind: ModelKind, case: GridCase, config: FcopfConfig,
                predictor: Optional[MlpModel] = None, loads: Optional[Sequence[float]] = None,
                bounds_config: Optional[BoundsConfig] = None) -> OpfModel:
    if kind == ModelKind.TOPF:
        return build_topf(case, config.pwl_segments, loads)
    if kind == ModelKind.LFCOPF:
        return build_lfcopf(case, config, config.pwl_segments, loads)
    if predictor is None:
        raise DispatchError("DNN-FCOPF 需要训练好的预测器")
    return build_dnn_fcopf(case, predictor, config, config.pwl_segments, loads,
                           bounds_config=bounds_config)


def extract_dispatch(model: OpfModel, solution: Solution) -> DispatchResult:
    """从解中读取调度结果并独立复核潮流约束与频率约束"""
    if solution.status != SolveStatus.OPTIMAL:
        raise DispatchError(f"{model.kind.label} 求解未得到最优解: {solution.status.value}")
    case = model.case
    output = np.array([solution.value(v) for v in model.output_vars])
    op = OperatingPoint(group_output=output, loads=model.loads.copy(),
                        angles=np.array([solution.value(v) for v in model.angle_vars]),
                        flows=np.array([solution.value(v) for v in model.flow_vars]))
    violations = check_operating_point(case, op)
    if violations:
        raise DispatchVerificationError(f"{model.kind.label} 调度结果复核失败: {violations[0]}")

    quadratic = sum(g.unit_count * g.unit_cost(p) for g, p in zip(case.gen_groups, output))
    result = DispatchResult(kind=model.kind, group_output=output, loads=op.loads, angles=op.angles,
                            flows=op.flows, total_cost=float(solution.objective),
                            quadratic_cost=float(quadratic), status=solution.status,
                            solve_time=solution.wall_time, nodes=solution.nodes)

    if model.kind == ModelKind.LFCOPF:
        result.linear_rocof = {unit: coef * float(output[case.group_index(unit)])
                               for unit, coef in model.rocof_coefficients.items()}
    if model.kind == ModelKind.DNNFCOPF:
        thresholds = model.thresholds
        result.predicted = {}
        lookup = {name: solution.value(name) for name in model.output_vars}
        for unit, fragment in model.fragments.items():
            nadir = solution.value(fragment.outputs[0])
            rocof = solution.value(fragment.outputs[1])
            expected_nadir, expected_rocof = forward(model.predictor, fragment.input_values(lookup))
            for label, got, want in (("nadir", nadir, expected_nadir), ("rocof", rocof, expected_rocof)):
                if abs(got - want) > 1e-6:
                    raise DispatchVerificationError(
                        f"故障 {unit} 的 {label} 编码输出 {got} 与前向计算 {want} 不一致")
            if rocof < thresholds.rocof_threshold - 1e-6 or nadir < thresholds.nadir_threshold - 1e-6:
                raise DispatchVerificationError(f"故障 {unit} 的预测频率指标违反阈值")
            result.predicted[unit] = {"nadir": float(expected_nadir), "rocof": float(expected_rocof)}
    return result


def solve_opf(model: OpfModel, config: Optional[SolverConfig] = None) -> DispatchResult:
    """求解调度模型"""
    heuristic = model.heuristic if model.fragments else None
    solution = solve_milp(model.problem, config, heuristic=heuristic)
    if solution.status == SolveStatus.INFEASIBLE:
        raise DispatchError(f"{model.kind.label} 无可行解")
    result = extract_dispatch(model, solution)
    logger.info(f"{model.kind.label} 求解完成: 成本 {result.total_cost:.2f}, "
                f"出力 {np.round(result.group_output, 3).tolist()}, {solution.nodes} 个节点")
    return result


def save_dispatch(result: DispatchResult, path: Union[str, Path],
                  include_timings: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(result.to_dict(include_timings), f, sort_keys=False, allow_unicode=True)
    return path


def load_dispatch(path: Union[str, Path]) -> DispatchResult:
    path = Path(path)
    if not path.exists():
        raise DispatchError(f"调度结果文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return DispatchResult.from_dict(yaml.safe_load(f) or {})
