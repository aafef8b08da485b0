from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from src.core.profiles import (
    DeadzoneProfile,
    LinearProfile,
    PiecewiseLinearProfile,
    SaturatingProfile,
    ScalarProfile,
    SigmoidProfile,
    ZeroProfile,
)
from src.core.registry import profile_kinds

if TYPE_CHECKING:
    from numpy.random import Generator


@profile_kinds.register("linear")
def linear(rng: Generator) -> ScalarProfile:
    """s(y) = y，对应斜率上界 ∇f = L·id。"""
    return LinearProfile()


@profile_kinds.register("zero")
def zero(rng: Generator) -> ScalarProfile:
    """s = 0，对应斜率下界 ∇f = m·id。"""
    return ZeroProfile()


@profile_kinds.register("saturating")
def saturating(rng: Generator) -> ScalarProfile:
    """
    随机宽度的单位斜率饱和。

    Args:
        rng: 随机数生成器。

    Returns:
        ScalarProfile: 宽度取自 [0.1, 2] 的饱和轮廓。
    """
    return SaturatingProfile(width=float(rng.uniform(0.1, 2.0)))


@profile_kinds.register("deadzone")
def deadzone(rng: Generator) -> ScalarProfile:
    """单位宽度死区（恒等减去单位饱和）。"""
    return DeadzoneProfile(width=1.0)


@profile_kinds.register("smooth-sigmoid")
def smooth_sigmoid(rng: Generator) -> ScalarProfile:
    """
    随机尺度的 tanh 型轮廓。

    Args:
        rng: 随机数生成器。

    Returns:
        ScalarProfile: 尺度取自 [0.2, 3] 的 a·tanh(y/a)。
    """
    return SigmoidProfile(scale=float(rng.uniform(0.2, 3.0)))


@profile_kinds.register("random-piecewise-linear")
def random_piecewise_linear(rng: Generator) -> ScalarProfile:
    """
    随机分段线性轮廓。

    断点数取 1 到 5，位置取自 [-3, 3]；斜率取自 [0, 1]，并以一定概率取到端点 0 或 1，
    以覆盖斜率区间的边界。

    Args:
        rng: 随机数生成器。

    Returns:
        ScalarProfile: 分段线性轮廓。
    """
    count = int(rng.integers(1, 6))
    breakpoints = np.sort(rng.uniform(-3.0, 3.0, count))
    while np.any(np.diff(breakpoints) <= 0):
        breakpoints = np.sort(rng.uniform(-3.0, 3.0, count))
    slopes = rng.uniform(0.0, 1.0, count + 1)
    extremes = rng.random(count + 1)
    slopes[extremes < 0.2] = 0.0
    slopes[extremes > 0.8] = 1.0
    return PiecewiseLinearProfile(breakpoints=breakpoints, slopes=slopes)
