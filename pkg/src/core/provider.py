from __future__ import annotations

import abc
import time
from typing import TYPE_CHECKING, Any, Literal

import cvxpy as cp
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src.config import settings
from src.core.arrays import Vector
from src.core.registry import solver_backends

if TYPE_CHECKING:
    from src.core.sdp import MatrixInequality, SdpProblem

type SolveStatus = Literal["optimal", "infeasible", "failed"]


class SolverOptions(BaseModel):
    """求解器选项。

    Attributes:
        backend: 后端注册名。
        solver: 后端内部使用的锥规划求解器。
        eps: 严格 LMI 的相对裕度，实际裕度再乘以问题尺度。
        time_limit: 单次求解时间上限（秒）。
        extra: 透传给求解器的其他参数。
    """

    model_config = ConfigDict(frozen=True)

    backend: str = Field(default_factory=lambda: settings.SOLVER_BACKEND)
    solver: str = Field(default_factory=lambda: settings.SOLVER_NAME)
    eps: float = Field(default_factory=lambda: settings.SOLVER_EPS, gt=0)
    time_limit: float | None = Field(default_factory=lambda: settings.SOLVER_TIME_LIMIT)
    extra: dict[str, Any] = Field(default_factory=lambda: settings.solver_options)


class SolveResult(BaseModel):
    """一次求解的结果。"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    status: SolveStatus
    x: Vector | None = None
    raw_status: str
    solver: str
    seconds: float = 0.0


class SolverBackend(abc.ABC):
    """半定规划求解后端接口。"""

    name: str = ""

    @abc.abstractmethod
    def solve(self, problem: SdpProblem, options: SolverOptions) -> SolveResult:
        """求解问题。

        Args:
            problem: 线性目标、仿射 LMI 与仿射标量不等式。
            options: 求解器选项。

        Returns:
            SolveResult: 状态与（可行时的）决策向量。
        """


@solver_backends.register("cvxpy")
class CvxpyBackend(SolverBackend):
    """基于 cvxpy 建模层的后端，缺省调用 Clarabel。"""

    name = "cvxpy"

    _OPTIMAL = frozenset({cp.OPTIMAL, cp.OPTIMAL_INACCURATE})
    _INFEASIBLE = frozenset({cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE})

    def _lmi_constraints(self, x: cp.Variable, lmi: MatrixInequality) -> list[Any]:
        k = lmi.mapping.dim
        expr = cp.reshape(
            cp.Constant(lmi.mapping.coefficients.reshape(-1, k * k).T) @ x + lmi.mapping.constant.ravel(),
            (k, k),
            order="C",
        )
        block = cp.Variable((k, k), symmetric=True)
        bound = lmi.margin * np.eye(k)
        if lmi.sense == "psd":
            return [block == expr, block >> bound]
        return [block == expr, -block >> bound]

    def solve(self, problem: SdpProblem, options: SolverOptions) -> SolveResult:
        x = cp.Variable(problem.num_variables)
        constraints: list[Any] = []
        for lmi in problem.lmis:
            constraints.extend(self._lmi_constraints(x, lmi))
        if len(problem.inequalities):
            constraints.append(problem.inequalities.G @ x + problem.inequalities.g >= 0)
        program = cp.Problem(cp.Minimize(problem.objective @ x), constraints)

        kwargs = dict(options.extra)
        if options.time_limit is not None and options.solver.upper() == "CLARABEL":
            kwargs.setdefault("time_limit", options.time_limit)

        start = time.perf_counter()
        try:
            program.solve(solver=options.solver, **kwargs)
        except cp.SolverError as e:
            logger.error("Solver {} failed: {}", options.solver, e)
            return SolveResult(
                status="failed", raw_status=str(e), solver=options.solver, seconds=time.perf_counter() - start
            )
        seconds = time.perf_counter() - start
        raw = str(program.status)

        if program.status in self._OPTIMAL and x.value is not None:
            if program.status != cp.OPTIMAL:
                logger.warning("Solver {} reported {}", options.solver, raw)
            return SolveResult(status="optimal", x=x.value, raw_status=raw, solver=options.solver, seconds=seconds)
        if program.status in self._INFEASIBLE:
            logger.info("Solver {} reported {}", options.solver, raw)
            return SolveResult(status="infeasible", raw_status=raw, solver=options.solver, seconds=seconds)
        logger.warning("Solver {} finished with unusable status {}", options.solver, raw)
        return SolveResult(status="failed", raw_status=raw, solver=options.solver, seconds=seconds)


def get_backend(name: str | None = None) -> SolverBackend:
    """按注册名构造后端实例。"""
    backend_cls = solver_backends.require(name or settings.SOLVER_BACKEND)
    return backend_cls()
