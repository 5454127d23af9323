"""
求解器对照：scipy HiGHS 线性规划与 0/1 变量穷举
"""
import itertools
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from core.milp_solver import LinearProgram, MilpProblem, Sense


def scipy_lp(lp: LinearProgram) -> Tuple[str, Optional[float]]:
    """返回 (状态, 目标值)，状态为 optimal / infeasible / unbounded"""
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for row, sense, rhs in zip(lp.matrix, lp.senses, lp.rhs):
        if sense == Sense.LE:
            a_ub.append(row)
            b_ub.append(rhs)
        elif sense == Sense.GE:
            a_ub.append(-row)
            b_ub.append(-rhs)
        else:
            a_eq.append(row)
            b_eq.append(rhs)
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(lp.lower, lp.upper)]
    result = linprog(
        lp.objective,
        A_ub=np.array(a_ub) if a_ub else None, b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None, b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds, method="highs",
    )
    if result.status == 0:
        return "optimal", float(result.fun)
    if result.status == 2:
        return "infeasible", None
    if result.status == 3:
        return "unbounded", None
    raise RuntimeError(result.message)


def brute_force_milp(problem: MilpProblem) -> Optional[float]:
    """枚举全部 0/1 取值组合，逐个求解剩余线性规划；不可行时返回 None"""
    lp = problem.lp
    best = None
    for combo in itertools.product((0.0, 1.0), repeat=len(problem.binaries)):
        lower, upper = lp.lower.copy(), lp.upper.copy()
        for j, v in zip(problem.binaries, combo):
            lower[j] = upper[j] = v
        status, objective = scipy_lp(lp.with_bounds(lower, upper))
        if status == "optimal" and (best is None or objective < best):
            best = objective
    return best
