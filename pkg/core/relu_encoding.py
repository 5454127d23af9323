"""
ReLU 网络的混合整数线性编码
区间界传播（可选 LP 收紧）+ 大M法精确编码，稳定神经元不引入0/1变量
"""
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.logger import get_logger
from core.exceptions import EncodingError, ModelDimensionError
from core.grid import GridCase
from core.milp_solver import (
    MilpProblem, ProblemBuilder, RowSpec, Sense, SolveStatus, SolverConfig, VariableSpec,
    lp_format_text, solve_lp, solve_milp
)
from core.predictor import MlpModel, fold_normalization, forward

logger = get_logger("encode")

InputHandle = Union[str, float]


class BoundMethod(Enum):
    """界传播方法"""
    INTERVAL = "interval"
    LP = "lp"


class Polarity(Enum):
    ALWAYS_ACTIVE = "active"
    ALWAYS_INACTIVE = "inactive"


@dataclass
class BoundsConfig:
    """界传播配置"""
    method: BoundMethod = BoundMethod.INTERVAL
    load_margin: float = 0.2
    margin: float = 1e-7  # 编码时对区间界的相对放宽量

    def __post_init__(self):
        if isinstance(self.method, str):
            self.method = BoundMethod(self.method)


@dataclass
class InputBox:
    """输入特征的逐分量区间"""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise EncodingError("输入区间上下界维度不一致")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise EncodingError("输入区间必须有界")
        if np.any(self.lower > self.upper):
            raise EncodingError("输入区间下界大于上界")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, x: Sequence[float], tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    @classmethod
    def for_instance(cls, case: GridCase, loads: Sequence[float],
                     one_hot: Sequence[float]) -> "InputBox":
        """单个OPF实例：机组出力取上下限，负荷与切机编码为定值"""
        loads = np.asarray(loads, dtype=float)
        one_hot = np.asarray(one_hot, dtype=float)
        lower = np.concatenate([[g.p_min for g in case.gen_groups], loads, one_hot])
        upper = np.concatenate([[g.p_max for g in case.gen_groups], loads, one_hot])
        return cls(lower=lower, upper=upper)

    @classmethod
    def operating_box(cls, case: GridCase, n_contingencies: int,
                      load_margin: float = 0.2) -> "InputBox":
        """运行域：机组出力上下限、负荷 ±load_margin、切机编码 [0, 1]"""
        loads = case.load_vector()
        lower = np.concatenate([[g.p_min for g in case.gen_groups], loads * (1 - load_margin),
                                np.zeros(n_contingencies)])
        upper = np.concatenate([[g.p_max for g in case.gen_groups], loads * (1 + load_margin),
                                np.ones(n_contingencies)])
        return cls(lower=lower, upper=upper)


@dataclass(frozen=True)
class StableNeuron:
    layer: int
    index: int
    polarity: Polarity


@dataclass
class NeuronBounds:
    """各仿射层（隐藏层 + 输出层）预激活值的上下界，按原始量纲的折叠网络计算"""
    lower: List[np.ndarray]
    upper: List[np.ndarray]
    box: InputBox

    def validate(self, dims: Sequence[int]):
        layers = len(dims) - 1
        if len(self.lower) != layers or len(self.upper) != layers:
            raise EncodingError(f"界的层数应为 {layers}，实际 {len(self.lower)}/{len(self.upper)}")
        for m in range(layers):
            lo, hi = np.asarray(self.lower[m]), np.asarray(self.upper[m])
            if lo.shape != (dims[m + 1],) or hi.shape != (dims[m + 1],):
                raise EncodingError(f"第 {m + 1} 层界的维度错误")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise EncodingError(f"第 {m + 1} 层界含非有限值")
            bad = np.nonzero(lo > hi)[0]
            if bad.size:
                raise EncodingError(f"第 {m + 1} 层第 {bad[0]} 个神经元下界大于上界")
        if self.box.dim != dims[0]:
            raise EncodingError("输入区间维度与网络不一致")

    @property
    def output_lower(self) -> np.ndarray:
        return self.lower[-1]

    @property
    def output_upper(self) -> np.ndarray:
        return self.upper[-1]

    def polarity(self, layer: int, index: int) -> Optional[Polarity]:
        """隐藏层神经元的稳定性；不稳定时返回 None"""
        lo, hi = self.lower[layer][index], self.upper[layer][index]
        if lo >= 0:
            return Polarity.ALWAYS_ACTIVE
        if hi <= 0:
            return Polarity.ALWAYS_INACTIVE
        return None

    def stable_neurons(self) -> List[StableNeuron]:
        result = []
        for m in range(len(self.lower) - 1):
            for j in range(len(self.lower[m])):
                polarity = self.polarity(m, j)
                if polarity is not None:
                    result.append(StableNeuron(layer=m, index=j, polarity=polarity))
        return result


def _interval_layer(w: np.ndarray, b: np.ndarray, lo: np.ndarray,
                    hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    low_terms = lo[:, None] * w
    high_terms = hi[:, None] * w
    return (b + np.minimum(low_terms, high_terms).sum(axis=0),
            b + np.maximum(low_terms, high_terms).sum(axis=0))


@dataclass
class MilpFragment:
    """网络的MILP片段：变量、约束与输出变量名，输入由外部变量或常数提供"""
    prefix: str
    inputs: List[InputHandle]
    variables: List[VariableSpec]
    rows: List[RowSpec]
    pre_activations: List[List[str]]
    activations: List[List[str]]
    binaries: List[str]
    outputs: List[str]
    stable: List[StableNeuron]
    binary_positions: List[Tuple[int, int]] = field(default_factory=list)
    weights: List[np.ndarray] = field(repr=False, default_factory=list)
    biases: List[np.ndarray] = field(repr=False, default_factory=list)
    box: Optional[InputBox] = field(repr=False, default=None)

    def input_values(self, values: Dict[str, float]) -> np.ndarray:
        return np.array([values[h] if isinstance(h, str) else float(h) for h in self.inputs])

    def complete(self, x: Sequence[float]) -> Dict[str, float]:
        """给定输入做一次前向计算，得到片段全部变量的取值"""
        result: Dict[str, float] = {}
        a = np.asarray(x, dtype=float)
        hidden = len(self.weights) - 1
        for m in range(hidden):
            z = a @ self.weights[m] + self.biases[m]
            a = np.maximum(z, 0.0)
            for j, name in enumerate(self.pre_activations[m]):
                result[name] = float(z[j])
            for j, name in enumerate(self.activations[m]):
                result[name] = float(a[j])
        for name, (layer, index) in zip(self.binaries, self.binary_positions):
            result[name] = 1.0 if result[self.pre_activations[layer][index]] > 0 else 0.0
        out = a @ self.weights[-1] + self.biases[-1]
        for k, name in enumerate(self.outputs):
            result[name] = float(out[k])
        return result


class _FragmentWriter:
    """逐层写出编码变量与约束"""

    def __init__(self, prefix: str, margin: float, relax: bool):
        self.prefix = prefix
        self.margin = margin
        self.relax = relax
        self.variables: List[VariableSpec] = []
        self.rows: List[RowSpec] = []
        self.pre: List[List[str]] = []
        self.act: List[List[str]] = []
        self.binaries: List[str] = []
        self.positions: List[Tuple[int, int]] = []
        self.stable: List[StableNeuron] = []

    def widen(self, lo: float, hi: float) -> Tuple[float, float]:
        return lo - self.margin * (1.0 + abs(lo)), hi + self.margin * (1.0 + abs(hi))

    def affine(self, w: np.ndarray, b: np.ndarray, prev: List[InputHandle], j: int,
               target: str, row: str):
        terms = [(target, 1.0)]
        rhs = float(b[j])
        for i, handle in enumerate(prev):
            coef = float(w[i, j])
            if coef == 0.0:
                continue
            if isinstance(handle, str):
                terms.append((handle, -coef))
            else:
                rhs += coef * float(handle)
        self.rows.append(RowSpec(name=row, coeffs=tuple(terms), sense=Sense.EQ, rhs=rhs))

    def hidden_layer(self, m: int, w: np.ndarray, b: np.ndarray, prev: List[InputHandle],
                     lower: np.ndarray, upper: np.ndarray) -> List[str]:
        p = self.prefix
        layer = m + 1
        z_names, a_names = [], []
        for j in range(w.shape[1]):
            h_l, h_u = float(lower[j]), float(upper[j])
            lo_w, hi_w = self.widen(h_l, h_u)
            z, a = f"{p}_z{layer}_{j}", f"{p}_a{layer}_{j}"
            self.variables.append(VariableSpec(z, lo_w, hi_w))
            self.affine(w, b, prev, j, z, f"{p}_aff{layer}_{j}")
            if h_l >= 0:
                self.variables.append(VariableSpec(a, max(0.0, lo_w), hi_w))
                self.rows.append(RowSpec(f"{p}_act{layer}_{j}", ((a, 1.0), (z, -1.0)), Sense.EQ, 0.0))
                self.stable.append(StableNeuron(m, j, Polarity.ALWAYS_ACTIVE))
            elif h_u <= 0:
                self.variables.append(VariableSpec(a, 0.0, 0.0))
                self.stable.append(StableNeuron(m, j, Polarity.ALWAYS_INACTIVE))
            else:
                s = f"{p}_b{layer}_{j}"
                self.variables.append(VariableSpec(a, 0.0, hi_w))
                self.variables.append(VariableSpec(s, 0.0, 1.0, binary=not self.relax))
                self.binaries.append(s)
                self.positions.append((m, j))
                self.rows += [
                    # a ≤ z − h_l·(1 − s)
                    RowSpec(f"{p}_ub{layer}_{j}", ((a, 1.0), (z, -1.0), (s, -lo_w)), Sense.LE, -lo_w),
                    RowSpec(f"{p}_lz{layer}_{j}", ((a, 1.0), (z, -1.0)), Sense.GE, 0.0),
                    RowSpec(f"{p}_on{layer}_{j}", ((a, 1.0), (s, -hi_w)), Sense.LE, 0.0),
                    RowSpec(f"{p}_nn{layer}_{j}", ((a, 1.0),), Sense.GE, 0.0),
                ]
            z_names.append(z)
            a_names.append(a)
        self.pre.append(z_names)
        self.act.append(a_names)
        return a_names

    def output_layer(self, w: np.ndarray, b: np.ndarray, prev: List[InputHandle],
                     lower: np.ndarray, upper: np.ndarray) -> List[str]:
        names = []
        for k in range(w.shape[1]):
            name = f"{self.prefix}_out{k}"
            lo_w, hi_w = self.widen(float(lower[k]), float(upper[k]))
            self.variables.append(VariableSpec(name, lo_w, hi_w))
            self.affine(w, b, prev, k, name, f"{self.prefix}_outdef{k}")
            names.append(name)
        return names


def _hidden_layers(writer: _FragmentWriter, weights: List[np.ndarray], biases: List[np.ndarray],
                   lower: List[np.ndarray], upper: List[np.ndarray], inputs: List[InputHandle],
                   count: int) -> List[InputHandle]:
    prev: List[InputHandle] = list(inputs)
    for m in range(count):
        prev = writer.hidden_layer(m, weights[m], biases[m], prev, lower[m], upper[m])
    return prev


def _tighten(weights: List[np.ndarray], biases: List[np.ndarray], lower: List[np.ndarray],
             upper: List[np.ndarray], box: InputBox, m: int, h_l: np.ndarray, h_u: np.ndarray,
             config: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """以前 m 层的线性松弛求第 m 层每个神经元的上下界"""
    builder = ProblemBuilder("tighten")
    inputs = [builder.add_variable(f"x_{i}", box.lower[i], box.upper[i]) for i in range(box.dim)]
    writer = _FragmentWriter("t", margin=1e-7, relax=True)
    last = _hidden_layers(writer, weights, biases, lower, upper, inputs, m)
    builder.absorb(writer.variables, writer.rows)
    lp = builder.build().lp
    columns = [lp.index(name) for name in last]
    h_l, h_u = h_l.copy(), h_u.copy()
    for j in range(weights[m].shape[1]):
        cost = np.zeros(lp.n_vars)
        cost[columns] = weights[m][:, j]
        low = solve_lp(dataclasses.replace(lp, objective=cost), config)
        high = solve_lp(dataclasses.replace(lp, objective=-cost), config)
        if low.status == SolveStatus.OPTIMAL:
            value = low.objective + biases[m][j]
            h_l[j] = max(h_l[j], value - 1e-9 * (1.0 + abs(value)))
        if high.status == SolveStatus.OPTIMAL:
            value = -high.objective + biases[m][j]
            h_u[j] = min(h_u[j], value + 1e-9 * (1.0 + abs(value)))
    return h_l, np.maximum(h_u, h_l)


def propagate_bounds(model: MlpModel, box: InputBox, method: BoundMethod = BoundMethod.INTERVAL,
                     config: Optional[SolverConfig] = None) -> NeuronBounds:
    """
    逐层传播预激活值上下界

    Args:
        model: 预测器（标准化在内部并入权重）
        box: 输入区间
        method: interval 为区间算术；lp 在区间结果上再用线性松弛逐个收紧

    Returns:
        NeuronBounds
    """
    if box.dim != model.dims[0]:
        raise ModelDimensionError(f"输入区间维度 {box.dim} 与网络输入 {model.dims[0]} 不一致")
    weights, biases = fold_normalization(model)
    lower: List[np.ndarray] = []
    upper: List[np.ndarray] = []
    lo, hi = box.lower, box.upper
    for m, (w, b) in enumerate(zip(weights, biases)):
        h_l, h_u = _interval_layer(w, b, lo, hi)
        if method == BoundMethod.LP and m > 0:
            h_l, h_u = _tighten(weights, biases, lower, upper, box, m, h_l, h_u,
                                config or SolverConfig())
        lower.append(h_l)
        upper.append(h_u)
        lo, hi = np.maximum(h_l, 0.0), np.maximum(h_u, 0.0)
    bounds = NeuronBounds(lower=lower, upper=upper, box=box)
    logger.debug(f"界传播完成 ({method.value}): 稳定神经元 {len(bounds.stable_neurons())} 个")
    return bounds


def encode_network(model: MlpModel, bounds: NeuronBounds, input_handles: Sequence[InputHandle],
                   trip_constants: Sequence[float] = (), prefix: str = "nn",
                   margin: float = 1e-7) -> MilpFragment:
    """
    生成网络的精确MILP编码片段

    Args:
        model: 预测器
        bounds: 与输入区间对应的界
        input_handles: 前若干个输入，外部变量名或常数
        trip_constants: 其余输入（切机独热编码）常数
        prefix: 片段内变量名前缀

    Returns:
        MilpFragment，outputs 依次为 nadir、rocof 输出变量
    """
    inputs: List[InputHandle] = list(input_handles) + [float(c) for c in trip_constants]
    if len(inputs) != model.dims[0]:
        raise ModelDimensionError(f"输入句柄数 {len(inputs)} 与网络输入 {model.dims[0]} 不一致")
    bounds.validate(model.dims)
    weights, biases = fold_normalization(model)
    writer = _FragmentWriter(prefix, margin=margin, relax=False)
    last = _hidden_layers(writer, weights, biases, bounds.lower, bounds.upper, inputs,
                          model.n_hidden)
    outputs = writer.output_layer(weights[-1], biases[-1], last, bounds.lower[-1], bounds.upper[-1])
    return MilpFragment(prefix=prefix, inputs=inputs, variables=writer.variables, rows=writer.rows,
                        pre_activations=writer.pre, activations=writer.act,
                        binaries=writer.binaries, outputs=outputs, stable=writer.stable,
                        binary_positions=writer.positions,
                        weights=weights, biases=biases, box=bounds.box)


def encoding_stats(fragment: MilpFragment) -> Dict[str, int]:
    active = sum(1 for s in fragment.stable if s.polarity == Polarity.ALWAYS_ACTIVE)
    return {
        "variables": len(fragment.variables),
        "rows": len(fragment.rows),
        "binaries": len(fragment.binaries),
        "stable_active": active,
        "stable_inactive": len(fragment.stable) - active,
    }


def _standalone(fragment: MilpFragment) -> Tuple[ProblemBuilder, List[str]]:
    """片段 + 按输入区间定界的输入变量"""
    builder = ProblemBuilder(fragment.prefix)
    names = []
    for i, handle in enumerate(fragment.inputs):
        if isinstance(handle, str):
            lo, hi = (fragment.box.lower[i], fragment.box.upper[i]) if fragment.box else (-np.inf, np.inf)
            builder.add_variable(handle, lo, hi)
            names.append(handle)
    builder.absorb(fragment.variables, fragment.rows)
    return builder, names


def fragment_to_lp_text(fragment: MilpFragment) -> str:
    """片段导出为 CPLEX LP 格式文本，便于外部求解器核对"""
    builder, _ = _standalone(fragment)
    return lp_format_text(builder.build(), title=fragment.prefix)


@dataclass
class VerificationReport:
    samples: int
    failures: int
    max_deviation: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def verify_encoding(model: MlpModel, bounds: NeuronBounds, samples: int = 1000, seed: int = 0,
                    config: Optional[SolverConfig] = None, tolerance: float = 1e-6) -> VerificationReport:
    """
    在输入区间内随机取点，固定输入求解MILP，比较输出与前向计算结果
    """
    config = config or SolverConfig()
    inputs = [f"x_{i}" for i in range(model.dims[0])]
    fragment = encode_network(model, bounds, inputs, prefix="nn")
    builder, names = _standalone(fragment)
    problem = builder.build()
    columns = [problem.index(name) for name in names]
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for x in bounds.box.sample(rng, samples):
        lower, upper = problem.lp.lower.copy(), problem.lp.upper.copy()
        lower[columns] = x
        upper[columns] = x
        pinned = MilpProblem(lp=problem.lp.with_bounds(lower, upper), binaries=problem.binaries)
        solution = solve_milp(pinned, config)
        if solution.status != SolveStatus.OPTIMAL:
            failures += 1
            worst = np.inf
            continue
        expected = forward(model, x)
        got = np.array([solution.value(name) for name in fragment.outputs])
        deviation = np.abs(got - expected)
        worst = max(worst, float(deviation.max()))
        if np.any(deviation > tolerance):
            failures += 1
    logger.info(f"编码校验: {samples} 个样本, 失败 {failures} 个, 最大偏差 {worst:.3e}")
    return VerificationReport(samples=samples, failures=failures, max_deviation=worst)
