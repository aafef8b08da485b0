from __future__ import annotations

import asyncio
import time
from typing import TYPE_CHECKING

from loguru import logger

from src.config import settings
from src.core.provider import SolveResult, SolverOptions, get_backend

if TYPE_CHECKING:
    from collections.abc import Sequence

    from src.core.provider import SolverBackend
    from src.core.sdp import SdpProblem


class SolveExecutor:
    """并发求解执行器。

    每次求解在线程中运行，并发数由信号量限制；
    求解过程中的异常被记录并转换为 failed 结果，不会向上传播。
    """

    def __init__(
        self,
        backend: SolverBackend | None = None,
        options: SolverOptions | None = None,
        concurrency: int | None = None,
    ) -> None:
        self.options = options or SolverOptions()
        self.backend = backend or get_backend(self.options.backend)
        self.concurrency = concurrency or settings.WORKER_CONCURRENCY
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be positive, got {self.concurrency}")
        self._semaphore = asyncio.Semaphore(self.concurrency)
        self._active = 0

    @property
    def active(self) -> int:
        """当前正在运行的求解数。"""
        return self._active

    async def run(self, problem: SdpProblem) -> SolveResult:
        """在配额内求解一个问题。

        Args:
            problem: 待求解的半定规划。

        Returns:
            SolveResult: 求解结果。
        """
        async with self._semaphore:
            self._active += 1
            start = time.perf_counter()
            try:
                result = await asyncio.to_thread(self.backend.solve, problem, self.options)
            except Exception as e:
                logger.error("Solve with backend {} raised: {}", self.options.backend, e)
                result = SolveResult(
                    status="failed",
                    raw_status=f"{type(e).__name__}: {e}",
                    solver=self.options.solver,
                    seconds=time.perf_counter() - start,
                )
            finally:
                self._active -= 1
        logger.debug(
            "Solved {} variables / blocks {} -> {} in {:.3f}s",
            problem.num_variables,
            problem.block_sizes,
            result.status,
            result.seconds,
        )
        return result

    async def run_all(self, problems: Sequence[SdpProblem]) -> list[SolveResult]:
        """并发求解多个问题，结果按输入顺序返回。"""
        return list(await asyncio.gather(*(self.run(problem) for problem in problems)))
