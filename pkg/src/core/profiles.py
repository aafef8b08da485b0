from __future__ import annotations

import abc
from typing import TYPE_CHECKING, Annotated, Literal, Self

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.core.arrays import FloatArray, Vector
from src.core.model import FROZEN

if TYPE_CHECKING:
    from numpy.typing import ArrayLike


def _ramp_square(x: FloatArray) -> FloatArray:
    """½·max(x, 0)²。"""
    positive = np.maximum(x, 0.0)
    result: FloatArray = 0.5 * positive * positive
    return result


class ScalarProfile(BaseModel, abc.ABC):
    """标量轮廓 s：单调、1-Lipschitz、s(0) = 0，并带有闭式原函数 S(y) = ∫₀ʸ s。"""

    model_config = FROZEN

    kind: str

    @abc.abstractmethod
    def value(self, y: FloatArray) -> FloatArray:
        """逐元素计算 s(y)。"""

    @abc.abstractmethod
    def antiderivative(self, y: FloatArray) -> FloatArray:
        """逐元素计算 S(y)，满足 S(0) = 0。"""

    def kinks(self) -> FloatArray:
        """s 不可导的点；光滑轮廓为空。"""
        return np.zeros(0)

    def __call__(self, y: ArrayLike) -> FloatArray:
        return self.value(np.asarray(y, dtype=np.float64))


class LinearProfile(ScalarProfile):
    kind: Literal["linear"] = "linear"
    slope: float = Field(default=1.0, ge=0, le=1)

    def value(self, y: FloatArray) -> FloatArray:
        return self.slope * y

    def antiderivative(self, y: FloatArray) -> FloatArray:
        return 0.5 * self.slope * y * y


class ZeroProfile(ScalarProfile):
    kind: Literal["zero"] = "zero"

    def value(self, y: FloatArray) -> FloatArray:
        return np.zeros_like(y)

    def antiderivative(self, y: FloatArray) -> FloatArray:
        return np.zeros_like(y)


class SaturatingProfile(ScalarProfile):
    """s(y) = clip(y, -a, a)。"""

    kind: Literal["saturating"] = "saturating"
    width: float = Field(default=1.0, gt=0)

    def value(self, y: FloatArray) -> FloatArray:
        return np.clip(y, -self.width, self.width)

    def kinks(self) -> FloatArray:
        return np.array([-self.width, self.width])

    def antiderivative(self, y: FloatArray) -> FloatArray:
        a = self.width
        magnitude = np.abs(y)
        result: FloatArray = np.where(magnitude <= a, 0.5 * y * y, a * magnitude - 0.5 * a * a)
        return result


class DeadzoneProfile(ScalarProfile):
    """s(y) = y - clip(y, -a, a)，即宽度为 a 的死区。"""

    kind: Literal["deadzone"] = "deadzone"
    width: float = Field(default=1.0, gt=0)

    def value(self, y: FloatArray) -> FloatArray:
        return y - np.clip(y, -self.width, self.width)

    def kinks(self) -> FloatArray:
        return np.array([-self.width, self.width])

    def antiderivative(self, y: FloatArray) -> FloatArray:
        return _ramp_square(y - self.width) + _ramp_square(-y - self.width)


class SigmoidProfile(ScalarProfile):
    """s(y) = a·tanh(y/a)，S(y) = a²·log cosh(y/a)。"""

    kind: Literal["smooth-sigmoid"] = "smooth-sigmoid"
    scale: float = Field(default=1.0, gt=0)

    def value(self, y: FloatArray) -> FloatArray:
        return self.scale * np.tanh(y / self.scale)

    def antiderivative(self, y: FloatArray) -> FloatArray:
        u = y / self.scale
        # log cosh(u) = logaddexp(u, -u) - log 2，避免大 |u| 溢出
        result: FloatArray = self.scale**2 * (np.logaddexp(u, -u) - np.log(2.0))
        return result


class PiecewiseLinearProfile(ScalarProfile):
    """分段线性轮廓。

    在 (-∞, b₁), (b₁, b₂), ..., (b_K, ∞) 上的斜率依次为 c₀, ..., c_K ∈ [0, 1]。
    s 写成 c₀·y 加上各断点处的斜坡之和，S 按段闭式积分。

    Attributes:
        breakpoints: 严格递增的断点 b₁ < ... < b_K。
        slopes: K+1 个斜率。
    """

    kind: Literal["random-piecewise-linear"] = "random-piecewise-linear"
    breakpoints: Vector
    slopes: Vector

    @model_validator(mode="after")
    def _check_shape(self) -> Self:
        if self.slopes.shape[0] != self.breakpoints.shape[0] + 1:
            raise ValueError("piecewise-linear profile needs one more slope than breakpoints")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(self.slopes < 0) or np.any(self.slopes > 1):
            raise ValueError("slopes must lie in [0, 1]")
        return self

    def kinks(self) -> FloatArray:
        result: FloatArray = self.breakpoints[self._jumps != 0]
        return result

    @property
    def _jumps(self) -> FloatArray:
        result: FloatArray = np.diff(self.slopes)
        return result

    def value(self, y: FloatArray) -> FloatArray:
        b = self.breakpoints
        shifted = y[..., None] - b
        ramps = np.maximum(shifted, 0.0) - np.maximum(-b, 0.0)
        result: FloatArray = self.slopes[0] * y + ramps @ self._jumps
        return result

    def antiderivative(self, y: FloatArray) -> FloatArray:
        b = self.breakpoints
        yy = y[..., None]
        terms = _ramp_square(yy - b) - _ramp_square(-b) - np.maximum(-b, 0.0) * yy
        result: FloatArray = 0.5 * self.slopes[0] * y * y + terms @ self._jumps
        return result


type AnyProfile = Annotated[
    LinearProfile | ZeroProfile | SaturatingProfile | DeadzoneProfile | SigmoidProfile | PiecewiseLinearProfile,
    Field(discriminator="kind"),
]
