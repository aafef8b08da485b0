from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

if TYPE_CHECKING:
    from numpy.typing import ArrayLike

    from src.core.arrays import FloatArray


class CheckReport(BaseModel):
    """单项采样检查的结果。

    违例值均为带符号的归一化量，≤ 0 表示不等式成立。

    Attributes:
        name: 检查名称。
        samples: 抽取的样本数。
        worst_violation: 最坏违例（带符号）。
        tolerance: 容差。
        seed: 复现用随机种子。
        details: 子项最坏违例等附加信息。
        warnings: 不影响通过与否的提示。
    """

    model_config = ConfigDict(frozen=True)

    name: str
    samples: int
    worst_violation: float
    tolerance: float
    seed: int | None = None
    details: dict[str, float | int | str | bool] = Field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return self.worst_violation <= self.tolerance

    def summary_line(self) -> str:
        """CI 使用的单行摘要。"""
        status = "PASS" if self.passed else "FAIL"
        seed = "-" if self.seed is None else str(self.seed)
        return (
            f"{status} {self.name} samples={self.samples} worst={self.worst_violation:.3e} "
            f"tol={self.tolerance:.1e} seed={seed}"
        )


class VerificationReport(BaseModel):
    """证书事后验证的分项报告。"""

    model_config = ConfigDict(frozen=True)

    checks: tuple[CheckReport, ...]

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failing(self) -> list[str]:
        return [check.name for check in self.checks if not check.passed]

    def summary_lines(self) -> list[str]:
        return [check.summary_line() for check in self.checks]


def worst_of(values: ArrayLike) -> float:
    """返回最大值；空输入视为 0（没有违例）。"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    worst = float(np.max(arr))
    if math.isnan(worst):
        return math.inf
    return worst


def relative_violation(excess: ArrayLike, scale: ArrayLike) -> FloatArray:
    """按 1 + |scale| 归一化的违例量。"""
    result: FloatArray = np.asarray(excess, dtype=np.float64) / (1.0 + np.abs(np.asarray(scale, dtype=np.float64)))
    return result


