"""
线性规划与混合整数线性规划求解器
有界变量修正单纯形法（两阶段）+ 最优优先分支定界，附分段线性成本近似与 LP 文件导出
"""
import heapq
import itertools
import math
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.logger import get_logger
from core.exceptions import ConfigError, SolverError, SolverNumericalError

logger = get_logger("solver")

INF = math.inf


class Sense(Enum):
    """约束方向"""
    LE = "<="
    EQ = "="
    GE = ">="


class SolveStatus(Enum):
    """求解状态"""
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"


_SENSE_CODE = {Sense.LE: 0, Sense.EQ: 1, Sense.GE: 2}


@dataclass
class SolverConfig:
    """求解器容差与限制"""
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-9
    pivot_tol: float = 1e-9
    gap_tol: float = 1e-6
    integrality_tol: float = 1e-6
    node_limit: int = 20000
    refactor_interval: int = 50
    bland_after: int = 1000  # 连续退化迭代次数达到后切换为 Bland 规则
    max_iterations: Optional[int] = None

    def validate(self):
        for name in ("feasibility_tol", "optimality_tol", "pivot_tol", "gap_tol", "integrality_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"求解器容差 {name} 必须大于0")
        if self.node_limit < 1 or self.refactor_interval < 1 or self.bland_after < 1:
            raise ConfigError("求解器限制参数必须为正整数")


@dataclass(frozen=True)
class LinearProgram:
    """min c·x  s.t.  A x (≤,=,≥) b,  l ≤ x ≤ u"""
    names: Tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    matrix: np.ndarray
    senses: Tuple[Sense, ...]
    rhs: np.ndarray
    row_names: Tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.names)
        m = len(self.senses)
        if self.matrix.shape != (m, n):
            raise SolverError(f"约束矩阵形状应为 {(m, n)}，实际 {self.matrix.shape}")
        if self.lower.shape != (n,) or self.upper.shape != (n,) or self.objective.shape != (n,):
            raise SolverError("变量界或目标系数维度错误")
        if self.rhs.shape != (m,):
            raise SolverError("右端项维度错误")
        if self.row_names and len(self.row_names) != m:
            raise SolverError("约束名称数量错误")
        for label, arr in (("目标系数", self.objective), ("约束矩阵", self.matrix), ("右端项", self.rhs)):
            if not np.all(np.isfinite(arr)):
                raise SolverError(f"{label}含非有限值")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise SolverError("变量界含NaN")
        bad = np.nonzero(self.lower > self.upper)[0]
        if bad.size:
            raise SolverError(f"变量 {self.names[bad[0]]} 下界大于上界")

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.senses)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SolverError(f"变量 {name} 不存在")

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        return LinearProgram(names=self.names, lower=lower, upper=upper, objective=self.objective,
                             matrix=self.matrix, senses=self.senses, rhs=self.rhs,
                             row_names=self.row_names)


@dataclass(frozen=True)
class MilpProblem:
    """线性规划 + 0/1 变量下标集合"""
    lp: LinearProgram
    binaries: Tuple[int, ...] = ()

    def __post_init__(self):
        for j in self.binaries:
            if not 0 <= j < self.lp.n_vars:
                raise SolverError(f"0/1变量下标 {j} 越界")
            if self.lp.lower[j] < 0 or self.lp.upper[j] > 1:
                raise SolverError(f"0/1变量 {self.lp.names[j]} 的界必须位于 [0, 1]")

    @property
    def names(self) -> Tuple[str, ...]:
        return self.lp.names

    def index(self, name: str) -> int:
        return self.lp.index(name)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    lower: float
    upper: float
    binary: bool = False
    cost: float = 0.0


@dataclass(frozen=True)
class RowSpec:
    name: str
    coeffs: Tuple[Tuple[str, float], ...]
    sense: Sense
    rhs: float


@dataclass
class Solution:
    """求解结果"""
    status: SolveStatus
    values: Optional[np.ndarray] = None
    objective: Optional[float] = None
    names: Tuple[str, ...] = ()
    nodes: int = 0
    iterations: int = 0
    wall_time: float = 0.0
    gap: Optional[float] = None
    lower_bound: Optional[float] = None
    history: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    def value(self, name: str) -> float:
        if self.values is None:
            raise SolverError(f"求解状态为 {self.status.value}，没有变量取值")
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise SolverError(f"变量 {name} 不存在")

    def as_dict(self) -> Dict[str, float]:
        if self.values is None:
            return {}
        return {name: float(v) for name, v in zip(self.names, self.values)}


_NAME_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\]]*$")


class ProblemBuilder:
    """按名称增量构建 MILP"""

    def __init__(self, name: str = "problem"):
        self.name = name
        self._variables: List[VariableSpec] = []
        self._index: Dict[str, int] = {}
        self._costs: Dict[str, float] = {}
        self._rows: List[RowSpec] = []
        self._row_names: set = set()

    @property
    def n_vars(self) -> int:
        return len(self._variables)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def has_variable(self, name: str) -> bool:
        return name in self._index

    def add_variable(self, name: str, lower: float, upper: float, binary: bool = False,
                     cost: float = 0.0) -> str:
        if not _NAME_PATTERN.match(name):
            raise SolverError(f"非法变量名: {name!r}")
        if name in self._index:
            raise SolverError(f"变量 {name} 重复定义")
        if binary and (lower < 0 or upper > 1):
            raise SolverError(f"0/1变量 {name} 的界必须位于 [0, 1]")
        self._index[name] = len(self._variables)
        self._variables.append(VariableSpec(name=name, lower=float(lower), upper=float(upper),
                                            binary=binary))
        if cost:
            self._costs[name] = float(cost)
        return name

    def add_constraint(self, coeffs: Union[Dict[str, float], Sequence[Tuple[str, float]]],
                       sense: Sense, rhs: float, name: Optional[str] = None) -> str:
        items = list(coeffs.items()) if isinstance(coeffs, dict) else list(coeffs)
        merged: Dict[str, float] = {}
        for var, coef in items:
            if var not in self._index:
                raise SolverError(f"约束引用了未定义的变量 {var}")
            merged[var] = merged.get(var, 0.0) + float(coef)
        name = name or f"r{len(self._rows) + 1}"
        if not _NAME_PATTERN.match(name):
            raise SolverError(f"非法约束名: {name!r}")
        if name in self._row_names:
            raise SolverError(f"约束 {name} 重复定义")
        self._row_names.add(name)
        self._rows.append(RowSpec(name=name, coeffs=tuple(merged.items()), sense=sense,
                                  rhs=float(rhs)))
        return name

    def set_cost(self, name: str, coef: float):
        if name not in self._index:
            raise SolverError(f"变量 {name} 不存在")
        self._costs[name] = float(coef)

    def absorb(self, variables: Sequence[VariableSpec], rows: Sequence[RowSpec]):
        """并入一组变量与约束（如神经网络编码片段）"""
        for var in variables:
            self.add_variable(var.name, var.lower, var.upper, binary=var.binary, cost=var.cost)
        for row in rows:
            self.add_constraint(row.coeffs, row.sense, row.rhs, name=row.name)

    def build(self) -> MilpProblem:
        n = len(self._variables)
        matrix = np.zeros((len(self._rows), n))
        for i, row in enumerate(self._rows):
            for var, coef in row.coeffs:
                matrix[i, self._index[var]] = coef
        objective = np.zeros(n)
        for var, coef in self._costs.items():
            objective[self._index[var]] = coef
        lp = LinearProgram(
            names=tuple(v.name for v in self._variables),
            lower=np.array([v.lower for v in self._variables], dtype=float),
            upper=np.array([v.upper for v in self._variables], dtype=float),
            objective=objective,
            matrix=matrix,
            senses=tuple(r.sense for r in self._rows),
            rhs=np.array([r.rhs for r in self._rows], dtype=float),
            row_names=tuple(r.name for r in self._rows),
        )
        binaries = tuple(i for i, v in enumerate(self._variables) if v.binary)
        return MilpProblem(lp=lp, binaries=binaries)


# ---------------------------------------------------------------- 单纯形法

class _BoundedSimplex:
    """
    有界变量修正单纯形法
    列布局：结构变量 | 每行一个松弛变量 | 初始不可行行的人工变量
    行 i：a_i·x + s_i (+ σ·r_i) = b_i；≤ 行 s∈[0,∞)，≥ 行 s∈(−∞,0]，= 行 s∈[0,0]
    """

    def __init__(self, matrix: np.ndarray, senses: np.ndarray, rhs: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray, config: SolverConfig):
        self.a = matrix
        self.b = rhs
        self.cfg = config
        m, n = matrix.shape
        self.m, self.n = m, n

        s_lo = np.where(senses == 2, -INF, 0.0)
        s_hi = np.where(senses == 0, INF, 0.0)
        x_struct = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
        residual = rhs - matrix @ x_struct
        tol = config.feasibility_tol
        needs_art = (residual < s_lo - tol) | (residual > s_hi + tol)
        self.art_rows = np.nonzero(needs_art)[0]
        self.art_sign = np.sign(residual[self.art_rows])
        k = len(self.art_rows)
        total = n + m + k
        self.total = total

        self.lo = np.concatenate([lower, s_lo, np.zeros(k)])
        self.hi = np.concatenate([upper, s_hi, np.full(k, INF)])
        self.x = np.zeros(total)
        self.x[:n] = x_struct

        basis = n + np.arange(m)
        for col, row in enumerate(self.art_rows):
            basis[row] = n + m + col
            # 该行松弛变量停在其有限界0上
            self.x[n + row] = 0.0
        self.basis = basis
        self.is_basic = np.zeros(total, dtype=bool)
        self.is_basic[basis] = True
        self.binv = np.eye(m)
        self.iterations = 0
        self.max_iterations = config.max_iterations or 50 * (m + total) + 1000
        self._since_refactor = 0
        self.refactor()

    def column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.a[:, j]
        col = np.zeros(self.m)
        if j < self.n + self.m:
            col[j - self.n] = 1.0
        else:
            k = j - self.n - self.m
            col[self.art_rows[k]] = self.art_sign[k]
        return col

    def _basis_matrix(self) -> np.ndarray:
        return np.column_stack([self.column(j) for j in self.basis]) if self.m else np.zeros((0, 0))

    def condition(self) -> float:
        try:
            return float(np.linalg.cond(self._basis_matrix()))
        except np.linalg.LinAlgError:
            return INF

    def _nonbasic_product(self) -> np.ndarray:
        xn = np.where(self.is_basic, 0.0, self.x)
        out = self.a @ xn[:self.n] + xn[self.n:self.n + self.m]
        if len(self.art_rows):
            np.add.at(out, self.art_rows, self.art_sign * xn[self.n + self.m:])
        return out

    def refactor(self):
        """重新求逆基矩阵并由非基变量取值回算基变量"""
        if self.m == 0:
            return
        basis_matrix = self._basis_matrix()
        try:
            self.binv = np.linalg.inv(basis_matrix)
        except np.linalg.LinAlgError:
            raise SolverNumericalError("基矩阵奇异", condition=INF)
        self.x[self.basis] = self.binv @ (self.b - self._nonbasic_product())
        self._since_refactor = 0

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        y = cost[self.basis] @ self.binv
        d = np.empty(self.total)
        d[:self.n] = cost[:self.n] - y @ self.a
        d[self.n:self.n + self.m] = cost[self.n:self.n + self.m] - y
        if len(self.art_rows):
            d[self.n + self.m:] = cost[self.n + self.m:] - self.art_sign * y[self.art_rows]
        d[self.basis] = 0.0
        return d

    def run(self, cost: np.ndarray) -> SolveStatus:
        cfg = self.cfg
        bland = False
        degenerate = 0
        movable = (self.hi - self.lo) > 0
        while True:
            if self.iterations >= self.max_iterations:
                raise SolverNumericalError(f"单纯形迭代次数超过上限 {self.max_iterations}",
                                           condition=self.condition())
            if self._since_refactor >= cfg.refactor_interval:
                self.refactor()
            d = self.reduced_costs(cost)
            candidates = ~self.is_basic & movable
            can_inc = candidates & (self.x < self.hi) & (d < -cfg.optimality_tol)
            can_dec = candidates & (self.x > self.lo) & (d > cfg.optimality_tol)
            eligible = can_inc | can_dec
            if not eligible.any():
                return SolveStatus.OPTIMAL
            if bland:
                j = int(np.argmax(eligible))
            else:
                j = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
            direction = 1.0 if can_inc[j] else -1.0

            alpha = self.binv @ self.column(j) if self.m else np.zeros(0)
            dx = -direction * alpha
            x_b = self.x[self.basis]
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            ratios = np.full(self.m, INF)
            dec = dx < -cfg.pivot_tol
            inc = dx > cfg.pivot_tol
            with np.errstate(invalid="ignore"):
                ratios[dec] = (x_b[dec] - lo_b[dec]) / -dx[dec]
                ratios[inc] = (hi_b[inc] - x_b[inc]) / dx[inc]
            ratios = np.where(np.isnan(ratios), INF, np.maximum(ratios, 0.0))
            t_row = ratios.min() if self.m else INF
            t_flip = self.hi[j] - self.lo[j]

            if not math.isfinite(t_row) and not math.isfinite(t_flip):
                return SolveStatus.UNBOUNDED

            self.iterations += 1
            if t_flip <= t_row:
                step = t_flip
                if self.m:
                    self.x[self.basis] = x_b + step * dx
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
            else:
                step = t_row
                ties = np.nonzero(ratios <= t_row + 1e-12)[0]
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(dx[ties]))])
                leaving = int(self.basis[r])
                goes_upper = dx[r] > 0
                self.x[self.basis] = x_b + step * dx
                self.x[leaving] = self.hi[leaving] if goes_upper else self.lo[leaving]
                entering_value = self.x[j] + direction * step

                pivot_row = self.binv[r] / alpha[r]
                self.binv -= np.outer(alpha, pivot_row)
                self.binv[r] = pivot_row
                self.basis[r] = j
                self.is_basic[leaving] = False
                self.is_basic[j] = True
                self.x[j] = entering_value
                self._since_refactor += 1

            if step <= 1e-12:
                degenerate += 1
                if not bland and degenerate >= cfg.bland_after:
                    logger.debug(f"连续 {degenerate} 次退化迭代，切换为 Bland 规则")
                    bland = True
            else:
                degenerate = 0

    def artificial_sum(self) -> float:
        return float(self.x[self.n + self.m:].sum())

    def close_artificials(self):
        """第一阶段结束后人工变量固定为0"""
        self.hi[self.n + self.m:] = 0.0


def _solve_arrays(matrix: np.ndarray, senses: np.ndarray, rhs: np.ndarray, cost: np.ndarray,
                  lower: np.ndarray, upper: np.ndarray,
                  config: SolverConfig) -> Tuple[SolveStatus, Optional[np.ndarray], int]:
    m, n = matrix.shape
    if np.any(lower > upper):
        return SolveStatus.INFEASIBLE, None, 0
    simplex = _BoundedSimplex(matrix, senses, rhs, lower, upper, config)

    if len(simplex.art_rows):
        phase_one = np.zeros(simplex.total)
        phase_one[n + m:] = 1.0
        simplex.run(phase_one)
        simplex.refactor()
        if simplex.artificial_sum() > config.feasibility_tol:
            return SolveStatus.INFEASIBLE, None, simplex.iterations
        simplex.close_artificials()

    phase_two = np.zeros(simplex.total)
    phase_two[:n] = cost
    status = simplex.run(phase_two)
    if status != SolveStatus.OPTIMAL:
        return status, None, simplex.iterations
    simplex.refactor()

    x = simplex.x[:n].copy()
    tol = config.feasibility_tol
    if np.any(x < lower - tol) or np.any(x > upper + tol):
        raise SolverNumericalError("最优解违反变量界", condition=simplex.condition())
    x = np.clip(x, lower, upper)
    activity = matrix @ x
    violation = np.where(senses == 0, activity - rhs,
                         np.where(senses == 2, rhs - activity, np.abs(activity - rhs)))
    if m and violation.max() > tol:
        row = int(np.argmax(violation))
        raise SolverNumericalError(f"最优解违反第 {row} 行约束 {violation[row]:.3e}",
                                   condition=simplex.condition())
    return SolveStatus.OPTIMAL, x, simplex.iterations


def _sense_codes(lp: LinearProgram) -> np.ndarray:
    return np.array([_SENSE_CODE[s] for s in lp.senses], dtype=int)


def solve_lp(lp: LinearProgram, config: Optional[SolverConfig] = None) -> Solution:
    """
    求解线性规划

    Returns:
        Solution，status 为 optimal / infeasible / unbounded
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    status, x, iterations = _solve_arrays(lp.matrix, _sense_codes(lp), lp.rhs, lp.objective,
                                          lp.lower, lp.upper, config)
    objective = float(lp.objective @ x) if x is not None else None
    return Solution(status=status, values=x, objective=objective, names=lp.names, nodes=1,
                    iterations=iterations, wall_time=time.perf_counter() - start,
                    gap=0.0 if x is not None else None, lower_bound=objective)


# ---------------------------------------------------------------- 分支定界

Heuristic = Callable[[np.ndarray], Optional[np.ndarray]]


def _is_feasible(lp: LinearProgram, senses: np.ndarray, x: np.ndarray,
                 binaries: Sequence[int], config: SolverConfig) -> bool:
    tol = config.feasibility_tol
    if np.any(x < lp.lower - tol) or np.any(x > lp.upper + tol):
        return False
    if binaries:
        vb = x[list(binaries)]
        if np.any(np.abs(vb - np.round(vb)) > config.integrality_tol):
            return False
    activity = lp.matrix @ x
    violation = np.where(senses == 0, activity - lp.rhs,
                         np.where(senses == 2, lp.rhs - activity, np.abs(activity - lp.rhs)))
    return not (len(violation) and violation.max() > tol)


def _relative_gap(incumbent: float, bound: float) -> float:
    return (incumbent - bound) / max(1.0, abs(incumbent))


def solve_milp(problem: MilpProblem, config: Optional[SolverConfig] = None,
               heuristic: Optional[Heuristic] = None) -> Solution:
    """
    最优优先分支定界

    节点按（LP下界, −深度, 序号）出堆；分支变量取最接近0.5的0/1变量，并列时取下标最小者。
    heuristic 接收节点LP解，可返回完整候选解；可行且更优时更新现有解。

    Args:
        problem: MILP
        config: 求解器配置
        heuristic: 可选的候选解构造回调

    Returns:
        Solution；节点数耗尽时 status 为 gap_limit
    """
    config = config or SolverConfig()
    config.validate()
    start = time.perf_counter()
    lp = problem.lp
    senses = _sense_codes(lp)
    binaries = sorted(problem.binaries)
    counter = itertools.count()

    incumbent: Optional[np.ndarray] = None
    incumbent_obj = INF
    nodes = 0
    iterations = 0
    history: List[Tuple[int, float, float]] = []
    heap: List[Tuple[float, int, int, Tuple[Tuple[int, int], ...]]] = [(-INF, 0, next(counter), ())]
    hit_limit = False

    def accept(x: np.ndarray, source: str):
        nonlocal incumbent, incumbent_obj
        obj = float(lp.objective @ x)
        if obj < incumbent_obj - 1e-12:
            incumbent, incumbent_obj = x, obj
            logger.debug(f"节点 {nodes}: 新现有解 {obj:.6f} ({source})")

    def polish(x: np.ndarray) -> np.ndarray:
        """固定0/1变量后重解一次LP，去除整数容差内的残差"""
        lower, upper = lp.lower.copy(), lp.upper.copy()
        fixed = np.round(x[binaries])
        lower[binaries] = fixed
        upper[binaries] = fixed
        status, polished, _ = _solve_arrays(lp.matrix, senses, lp.rhs, lp.objective,
                                            lower, upper, config)
        return polished if status == SolveStatus.OPTIMAL else x

    while heap:
        bound, _, _, fixings = heap[0]
        if incumbent is not None and _relative_gap(incumbent_obj, bound) <= config.gap_tol:
            break
        if nodes >= config.node_limit:
            hit_limit = True
            break
        heapq.heappop(heap)
        nodes += 1

        lower, upper = lp.lower.copy(), lp.upper.copy()
        for j, v in fixings:
            lower[j] = upper[j] = float(v)
        status, x, its = _solve_arrays(lp.matrix, senses, lp.rhs, lp.objective, lower, upper, config)
        iterations += its
        if status == SolveStatus.UNBOUNDED:
            return Solution(status=SolveStatus.UNBOUNDED, names=lp.names, nodes=nodes,
                            iterations=iterations, wall_time=time.perf_counter() - start)
        if status == SolveStatus.INFEASIBLE:
            continue
        obj = float(lp.objective @ x)
        if incumbent is not None and _relative_gap(incumbent_obj, obj) <= config.gap_tol:
            continue

        if heuristic is not None:
            candidate = heuristic(x)
            if candidate is not None and _is_feasible(lp, senses, candidate, binaries, config):
                accept(np.asarray(candidate, dtype=float), "heuristic")

        values = x[binaries] if binaries else np.zeros(0)
        fractionality = np.minimum(values - np.floor(values), np.ceil(values) - values)
        fractional = fractionality > config.integrality_tol
        if not fractional.any():
            accept(polish(x) if binaries else x, "integral")
        else:
            k = int(np.argmax(np.where(fractional, fractionality, -1.0)))
            j = binaries[k]
            depth = len(fixings) + 1
            heapq.heappush(heap, (obj, -depth, next(counter), fixings + ((j, 0),)))
            heapq.heappush(heap, (obj, -depth, next(counter), fixings + ((j, 1),)))

        lower_bound = min(heap[0][0], incumbent_obj) if heap else incumbent_obj
        history.append((nodes, lower_bound, incumbent_obj))

    elapsed = time.perf_counter() - start
    lower_bound = min(heap[0][0], incumbent_obj) if heap else incumbent_obj
    if incumbent is None:
        status = SolveStatus.GAP_LIMIT if hit_limit else SolveStatus.INFEASIBLE
        logger.info(f"分支定界结束: {status.value}, {nodes} 个节点")
        return Solution(status=status, names=lp.names, nodes=nodes, iterations=iterations,
                        wall_time=elapsed, lower_bound=None if not heap else lower_bound,
                        history=history)

    gap = max(0.0, _relative_gap(incumbent_obj, lower_bound))
    status = SolveStatus.GAP_LIMIT if hit_limit and gap > config.gap_tol else SolveStatus.OPTIMAL
    logger.info(f"分支定界结束: {status.value}, 目标 {incumbent_obj:.6f}, {nodes} 个节点, "
                f"间隙 {gap:.2e}")
    return Solution(status=status, values=incumbent, objective=incumbent_obj, names=lp.names,
                    nodes=nodes, iterations=iterations, wall_time=elapsed, gap=gap,
                    lower_bound=lower_bound, history=history)


def solve(problem: Union[LinearProgram, MilpProblem], config: Optional[SolverConfig] = None,
          heuristic: Optional[Heuristic] = None) -> Solution:
    if isinstance(problem, LinearProgram):
        return solve_lp(problem, config)
    return solve_milp(problem, config, heuristic)


# ---------------------------------------------------------------- 分段线性成本

@dataclass(frozen=True)
class PwlCost:
    """二次成本在 K 段等距断点上的分段线性插值"""
    breakpoints: np.ndarray
    costs: np.ndarray
    c2: float

    @property
    def segments(self) -> int:
        return len(self.breakpoints) - 1

    def secants(self) -> List[Tuple[float, float]]:
        """各段割线 (斜率, 截距)"""
        result = []
        for k in range(self.segments):
            p0, p1 = self.breakpoints[k], self.breakpoints[k + 1]
            slope = (self.costs[k + 1] - self.costs[k]) / (p1 - p0)
            result.append((float(slope), float(self.costs[k] - slope * p0)))
        return result

    def evaluate(self, p: float) -> float:
        return float(np.interp(p, self.breakpoints, self.costs))

    def max_error(self) -> float:
        """插值相对二次函数的最大高估量 c2·Δ²/4"""
        delta = self.breakpoints[1] - self.breakpoints[0]
        return self.c2 * delta * delta / 4.0


def piecewise_linearize(c2: float, c1: float, c0: float, p_min: float, p_max: float,
                        segments: int) -> PwlCost:
    if not isinstance(segments, (int, np.integer)) or segments < 1:
        raise SolverError(f"分段数必须为正整数，实际 {segments}")
    if not p_min < p_max:
        raise SolverError(f"出力区间无效: [{p_min}, {p_max}]")
    if c2 < 0:
        raise SolverError("二次系数为负，成本非凸")
    points = np.linspace(p_min, p_max, segments + 1)
    return PwlCost(breakpoints=points, costs=c2 * points ** 2 + c1 * points + c0, c2=float(c2))


# ---------------------------------------------------------------- LP 文件导出

def _format_terms(terms: Sequence[Tuple[str, float]]) -> List[str]:
    parts = []
    for name, coef in terms:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {abs(coef)!r} {name}")
    return parts


def _wrap(prefix: str, parts: List[str], per_line: int = 6) -> List[str]:
    if not parts:
        return [prefix]
    lines = []
    for k in range(0, len(parts), per_line):
        head = prefix if k == 0 else " " * len(prefix)
        lines.append(head + " " + " ".join(parts[k:k + per_line]))
    return lines


def _bound_text(value: float) -> str:
    if value == INF:
        return "+inf"
    if value == -INF:
        return "-inf"
    return repr(float(value))


def lp_format_text(problem: Union[LinearProgram, MilpProblem], title: str = "fcopf") -> str:
    """CPLEX LP 格式文本"""
    if isinstance(problem, LinearProgram):
        problem = MilpProblem(lp=problem)
    lp = problem.lp
    lines = [f"\\ Problem: {title}", "Minimize"]
    lines += _wrap(" obj:", _format_terms(list(zip(lp.names, lp.objective))))
    lines.append("Subject To")
    row_names = lp.row_names or tuple(f"r{i + 1}" for i in range(lp.n_rows))
    for i in range(lp.n_rows):
        parts = _format_terms([(lp.names[j], lp.matrix[i, j]) for j in np.nonzero(lp.matrix[i])[0]])
        if not parts:
            parts = [f"+ 0 {lp.names[0]}"]
        wrapped = _wrap(f" {row_names[i]}:", parts)
        wrapped[-1] += f" {lp.senses[i].value} {lp.rhs[i]!r}"
        lines += wrapped
    lines.append("Bounds")
    for j, name in enumerate(lp.names):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            lines.append(f" {name} = {lo!r}")
        else:
            lines.append(f" {_bound_text(lo)} <= {name} <= {_bound_text(hi)}")
    if problem.binaries:
        lines.append("Binaries")
        lines += [f" {lp.names[j]}" for j in problem.binaries]
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp_format(problem: Union[LinearProgram, MilpProblem], path: Union[str, Path],
                    title: str = "fcopf") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(lp_format_text(problem, title), encoding="utf-8")
    return path
