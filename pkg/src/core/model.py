from __future__ import annotations

import hashlib
from typing import TYPE_CHECKING, Any, Literal, Self

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.arrays import FloatArray, Matrix, frozen_array

if TYPE_CHECKING:
    from collections.abc import Callable

    from numpy.typing import ArrayLike

    type Nonlinearity = Callable[[FloatArray], FloatArray]

FROZEN = ConfigDict(frozen=True, arbitrary_types_allowed=True, populate_by_name=True)


class SimulationDivergedError(RuntimeError):
    """闭环仿真出现非有限值。"""

    def __init__(self, step: int) -> None:
        super().__init__(f"simulation produced non-finite values at step {step}")
        self.step = step


class LtiSystem(BaseModel):
    """离散时间 LTI 被控对象 x⁺ = Ax + Bw, z = Cx + Dw。

    Attributes:
        A: n×n 状态矩阵。
        B: n×d 输入矩阵。
        C: d×n 输出矩阵。
        D: d×d 直通矩阵，缺省为零。
    """

    model_config = FROZEN

    A: Matrix
    B: Matrix
    C: Matrix
    D: Matrix

    @model_validator(mode="before")
    @classmethod
    def _default_feedthrough(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("D") is None:
            d = np.atleast_2d(np.asarray(data["C"], dtype=np.float64)).shape[0]
            data = {**data, "D": np.zeros((d, d))}
        return data

    @model_validator(mode="after")
    def _check_dimensions(self) -> Self:
        n = self.A.shape[0]
        d = self.B.shape[1]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape != (n, d):
            raise ValueError(f"B must be {n}x{d}, got {self.B.shape}")
        if self.C.shape != (d, n):
            raise ValueError(f"C must be {d}x{n}, got {self.C.shape}")
        if self.D.shape != (d, d):
            raise ValueError(f"D must be {d}x{d}, got {self.D.shape}")
        if n == 0 or d == 0:
            raise ValueError("state and channel dimensions must be positive")
        return self

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        return int(self.B.shape[1])

    @property
    def is_strictly_proper(self) -> bool:
        return not np.any(self.D)

    def require_strictly_proper(self) -> None:
        """要求 D = 0（回路适定性假设）。"""
        if not self.is_strictly_proper:
            raise ValueError("the feedthrough D must be exactly zero")


class SlopeBand(BaseModel):
    """梯度斜率区间 [m, L]，要求 -∞ < m < L < ∞。"""

    model_config = FROZEN

    m: float
    L: float

    @model_validator(mode="after")
    def _check_order(self) -> Self:
        if not (np.isfinite(self.m) and np.isfinite(self.L)):
            raise ValueError("slope bounds must be finite")
        if not self.m < self.L:
            raise ValueError(f"slope band requires m < L, got m={self.m}, L={self.L}")
        return self


class SectorCondition(BaseModel):
    """广义扇区条件的参数：死区宽度 l 和启用开关。"""

    model_config = FROZEN

    width: float = Field(alias="l", gt=0)
    enabled: bool = True


class MultiplierShape(BaseModel):
    """FIR 乘子的长度 (ν₁, ν₂)。"""

    model_config = FROZEN

    nu1: int = Field(default=0, ge=0)
    nu2: int = Field(default=0, ge=0)

    @property
    def length(self) -> int:
        return self.nu1 + 1 + self.nu2


class AnalysisProblem(BaseModel):
    """完整的分析问题描述，对应问题定义文件。

    Attributes:
        system: 被控对象。
        band: 斜率区间。
        rho: 指数衰减率，取值 (0, 1]。
        alpha: 输出能量权重。
        beta: 终端输出权重。
        sector: 广义扇区条件（仅死区 / 饱和回路）。
        multiplier: 乘子长度。
        nonlinearity: 回路非线性的类别。
    """

    model_config = FROZEN

    system: LtiSystem
    band: SlopeBand
    rho: float = Field(default=1.0, gt=0, le=1)
    alpha: float = Field(default=0.0, ge=0)
    beta: float = Field(default=0.0, ge=0)
    sector: SectorCondition | None = None
    multiplier: MultiplierShape = Field(default_factory=MultiplierShape)
    nonlinearity: Literal["gradient", "deadzone", "saturation"] = "gradient"

    @model_validator(mode="after")
    def _check_consistency(self) -> Self:
        if self.nonlinearity != "gradient":
            if self.sector is None:
                raise ValueError(f"{self.nonlinearity} loops need sector.l for the deadzone width")
            if self.band.m > 0:
                raise ValueError("deadzone/saturation slopes start at 0, so band.m must be <= 0")
        if self.sector_enabled and self.nonlinearity == "gradient":
            raise ValueError("the generalized sector condition only applies to deadzone/saturation loops")
        if self.nonlinearity == "saturation":
            self.system.require_strictly_proper()
        return self

    @property
    def sector_enabled(self) -> bool:
        return self.sector is not None and self.sector.enabled

    @property
    def deadzone_parameters(self) -> tuple[float, float]:
        """死区 (宽度 l, 增益 L)。"""
        if self.sector is None:
            raise ValueError("problem has no deadzone width")
        return self.sector.width, self.band.L

    def certified_system(self) -> LtiSystem:
        """返回实际建立 LMI 的被控对象（饱和回路先做回路变换）。"""
        if self.nonlinearity == "saturation":
            width, gain = self.deadzone_parameters
            return loop_transform_saturation(self.system, width, gain)[0]
        return self.system

    def with_gain(self, gain: float) -> AnalysisProblem:
        """替换斜率上界 L（扫描增益时使用）。"""
        return self.model_copy(update={"band": SlopeBand(m=self.band.m, L=gain)})

    def with_multiplier(self, nu1: int, nu2: int) -> AnalysisProblem:
        return self.model_copy(update={"multiplier": MultiplierShape(nu1=nu1, nu2=nu2)})

    def fingerprint(self) -> str:
        """问题的规范化 SHA-256 指纹。"""
        payload = orjson.dumps(self.model_dump(mode="json", by_alias=True), option=orjson.OPT_SORT_KEYS)
        return hashlib.sha256(payload).hexdigest()


class Trajectory(BaseModel):
    """闭环轨迹 x_0..x_T, z_0..z_T, w_0..w_T。"""

    model_config = FROZEN

    x: Matrix
    z: Matrix
    w: Matrix

    @property
    def horizon(self) -> int:
        return int(self.x.shape[0]) - 1

    def weighted(self, rho: float) -> Trajectory:
        """返回指数加权后的轨迹 (x̄, z̄, w̄) = T_{ρ⁻¹}(x, z, w)。"""
        return Trajectory(
            x=exp_weight(self.x, 1.0 / rho),
            z=exp_weight(self.z, 1.0 / rho),
            w=exp_weight(self.w, 1.0 / rho),
        )


def sector_transform_matrix(band: SlopeBand) -> FloatArray:
    """S_{m,L} = [[L, -1], [-m, 1]]，把 (z, w) 映射为 (u₁, u₂)。"""
    if not band.m < band.L:
        raise ValueError("sector transform requires m < L")
    return frozen_array([[band.L, -1.0], [-band.m, 1.0]])


def exp_weight(signal: ArrayLike, rho: float) -> FloatArray:
    """指数加权映射 (T_ρ s)_t = ρ^t s_t，时间沿第一个轴。"""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    arr = np.asarray(signal, dtype=np.float64)
    weights = rho ** np.arange(arr.shape[0], dtype=np.float64)
    result: FloatArray = arr * weights.reshape(-1, *([1] * (arr.ndim - 1)))
    return result


def _check_deadzone_parameters(width: float, gain: float) -> None:
    if width <= 0 or gain <= 0:
        raise ValueError(f"deadzone width and gain must be positive, got l={width}, L={gain}")


def deadzone_eval(x: ArrayLike, width: float, gain: float) -> FloatArray:
    """死区 dzn_{l,L}：[-l, l] 上为 0，其外斜率为 L。"""
    _check_deadzone_parameters(width, gain)
    arr = np.asarray(x, dtype=np.float64)
    result: FloatArray = gain * (arr - np.clip(arr, -width, width))
    return result


def saturation_eval(x: ArrayLike, width: float, gain: float) -> FloatArray:
    """饱和 sat_{l,L}(x) = Lx - dzn_{l,L}(x)，平台值 ±Ll。"""
    if width <= 0 or gain < 0:
        raise ValueError(f"saturation needs l > 0 and L >= 0, got l={width}, L={gain}")
    result: FloatArray = gain * np.clip(np.asarray(x, dtype=np.float64), -width, width)
    return result


def loop_transform_saturation(system: LtiSystem, width: float, gain: float) -> tuple[LtiSystem, tuple[float, float]]:
    """把饱和回路 w = sat(z) 变换为死区回路 w' = dzn(z)。

    由 sat = L·id - dzn 得 x⁺ = (A + LBC)x - B·dzn(Cx)。

    Returns:
        tuple[LtiSystem, tuple[float, float]]: 变换后的对象和死区参数 (l, L)。
    """
    system.require_strictly_proper()
    if width <= 0 or gain < 0:
        raise ValueError(f"saturation needs l > 0 and L >= 0, got l={width}, L={gain}")
    transformed = LtiSystem(
        A=system.A + gain * system.B @ system.C,
        B=-system.B,
        C=system.C,
        D=system.D,
    )
    return transformed, (width, gain)


def simulate_batch(system: LtiSystem, nonlin: Nonlinearity, x0: ArrayLike, horizon: int) -> FloatArray:
    """对一批初值同时仿真闭环，返回形状 (T+1, N, n) 的状态序列。

    Args:
        system: 被控对象（要求 D = 0）。
        nonlin: 逐行作用的非线性 (N, d) -> (N, d)。
        x0: 形状 (N, n) 的初值。
        horizon: 步数 T。

    Raises:
        SimulationDivergedError: 出现非有限值时报告首个出错步。
    """
    system.require_strictly_proper()
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    X0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if X0.shape[1] != system.n:
        raise ValueError(f"initial states must have {system.n} columns, got {X0.shape}")
    states = np.empty((horizon + 1, *X0.shape))
    states[0] = X0
    At, Bt, Ct = system.A.T, system.B.T, system.C.T
    for t in range(horizon):
        w = nonlin(states[t] @ Ct)
        states[t + 1] = states[t] @ At + w @ Bt
        if not np.all(np.isfinite(states[t + 1])):
            raise SimulationDivergedError(t + 1)
    return states


def simulate_loop(system: LtiSystem, nonlin: Nonlinearity, x0: ArrayLike, horizon: int) -> Trajectory:
    """仿真 x_{t+1} = Ax_t + Bw_t, z_t = Cx_t, w_t = ∇f(z_t)。"""
    x = simulate_batch(system, nonlin, np.asarray(x0, dtype=np.float64).reshape(1, -1), horizon)[:, 0, :]
    z = x @ system.C.T
    w = nonlin(z)
    if not np.all(np.isfinite(w)):
        raise SimulationDivergedError(int(np.argmax(~np.isfinite(w).all(axis=1))))
    return Trajectory(x=x, z=z, w=w)
