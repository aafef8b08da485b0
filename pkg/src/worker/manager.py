from __future__ import annotations

import asyncio
import time
from typing import TYPE_CHECKING, Literal

from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.core.certify import Certificate, certify_problem

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from src.core.model import AnalysisProblem
    from src.worker.executor import SolveExecutor

type SweepVariant = Literal["sector", "ozf"]

VARIANTS: tuple[SweepVariant, ...] = ("sector", "ozf")
CSV_HEADER = ("L", "variant", "gamma", "size", "mu", "feasible", "seconds")


class SweepRow(BaseModel):
    """扫描结果表的一行。不可行或失败时 gamma、size、mu 为空。"""

    model_config = ConfigDict(frozen=True)

    L: float
    variant: SweepVariant
    gamma: float | None = None
    size: float | None = None
    mu: float | None = None
    feasible: bool = False
    seconds: float = 0.0
    error: str | None = None

    def csv_fields(self, *, timing: bool = True) -> list[str]:
        def fmt(value: float | None) -> str:
            return "" if value is None else repr(value)

        return [
            repr(self.L),
            self.variant,
            fmt(self.gamma),
            fmt(self.size),
            fmt(self.mu),
            "true" if self.feasible else "false",
            repr(self.seconds if timing else 0.0),
        ]


class SweepManager:
    """增益扫描管理器。

    每个 (L, 变体) 单元作为独立任务提交，单元内部的求解通过共享的执行器排队；
    单元异常被记录为失败行，不会中断整个扫描。
    """

    def __init__(
        self,
        executor: SolveExecutor,
        *,
        mu_grid: Sequence[float] | None = None,
        eps: float | None = None,
    ) -> None:
        self._executor = executor
        self._mu_grid = mu_grid
        self._eps = eps

    async def _run_cell(self, template: AnalysisProblem, gain: float, variant: SweepVariant) -> SweepRow:
        start = time.perf_counter()
        try:
            problem = template.with_gain(gain)
            outcome = await certify_problem(
                problem,
                self._executor,
                mu_grid=self._mu_grid,
                use_multiplier=variant == "ozf",
                eps=self._eps,
            )
        except Exception as e:
            logger.error("Sweep cell L={} variant={} failed: {}", gain, variant, e)
            return SweepRow(L=gain, variant=variant, seconds=time.perf_counter() - start, error=str(e))

        seconds = time.perf_counter() - start
        if isinstance(outcome, Certificate):
            logger.info("Sweep cell L={} variant={} gamma={:.6g}", gain, variant, outcome.gamma)
            return SweepRow(
                L=gain,
                variant=variant,
                gamma=outcome.gamma,
                size=outcome.size,
                mu=outcome.mu,
                feasible=True,
                seconds=seconds,
            )
        logger.info("Sweep cell L={} variant={} infeasible", gain, variant)
        return SweepRow(L=gain, variant=variant, seconds=seconds)

    async def run(
        self, template: AnalysisProblem, gains: Iterable[float], variants: Sequence[SweepVariant] = VARIANTS
    ) -> list[SweepRow]:
        """
        在增益网格上运行全部变体。

        Args:
            template: 问题模板，L 被逐个替换。
            gains: L 取值。
            variants: sector 固定 λ = 0, E = 0；ozf 使用模板中的乘子长度。

        Returns:
            list[SweepRow]: 按 (L, 变体顺序) 排列的结果行。
        """
        gain_list = [float(gain) for gain in gains]
        if any(gain <= 0 for gain in gain_list):
            raise ValueError("sweep gains must be positive")
        order = {variant: i for i, variant in enumerate(variants)}
        cells = [(gain, variant) for gain in gain_list for variant in variants]
        logger.info("Starting sweep over {} gains x {} variants", len(gain_list), len(variants))
        rows = await asyncio.gather(*(self._run_cell(template, gain, variant) for gain, variant in cells))
        return sorted(rows, key=lambda row: (row.L, order[row.variant]))


async def sweep_gain_grid(
    template: AnalysisProblem,
    gains: Iterable[float],
    executor: SolveExecutor,
    variants: Sequence[SweepVariant] = VARIANTS,
    *,
    mu_grid: Sequence[float] | None = None,
    eps: float | None = None,
) -> list[SweepRow]:
    """SweepManager 的函数式入口。"""
    return await SweepManager(executor, mu_grid=mu_grid, eps=eps).run(template, gains, variants)
