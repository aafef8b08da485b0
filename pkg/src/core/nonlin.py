from __future__ import annotations

from typing import TYPE_CHECKING, Self

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.stats import ortho_group

from src.core.arrays import Matrix
from src.core.model import FROZEN, SlopeBand, exp_weight
from src.core.profiles import AnyProfile, DeadzoneProfile, SaturatingProfile
from src.core.registry import profile_kinds
from src.core.report import CheckReport, relative_violation, worst_of

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from src.core.arrays import FloatArray

ORTHOGONALITY_TOL = 1e-10


class SlopeRestrictedFunction(BaseModel):
    """类 𝒮⁰_{m,L} 中的一个可求值函数。

    ∇f(x) = Qᵀ(m·y + (L-m)·s(y))，y = Qx，s 逐分量作用；
    f(x) = m·q(x) + (L-m)·Σᵢ Sᵢ(yᵢ)，q(x) = ½‖x‖²。
    所有方法沿最后一个轴向量化。

    Attributes:
        band: 斜率区间 [m, L]。
        profiles: d 个标量轮廓。
        mixing: 可选的 d×d 正交混合矩阵 Q。
    """

    model_config = FROZEN

    band: SlopeBand
    profiles: tuple[AnyProfile, ...] = Field(min_length=1)
    mixing: Matrix | None = None

    @model_validator(mode="after")
    def _check_mixing(self) -> Self:
        if self.mixing is not None:
            d = len(self.profiles)
            if self.mixing.shape != (d, d):
                raise ValueError(f"mixing matrix must be {d}x{d}, got {self.mixing.shape}")
            if not np.allclose(self.mixing.T @ self.mixing, np.eye(d), atol=ORTHOGONALITY_TOL):
                raise ValueError("mixing matrix must be orthogonal")
        return self

    @property
    def d(self) -> int:
        return len(self.profiles)

    def _unmix(self, x: ArrayLike) -> FloatArray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1:] != (self.d,):
            raise ValueError(f"expected trailing dimension {self.d}, got shape {arr.shape}")
        if self.mixing is None:
            return arr
        result: FloatArray = arr @ self.mixing.T
        return result

    def _mix(self, y: FloatArray) -> FloatArray:
        if self.mixing is None:
            return y
        result: FloatArray = y @ self.mixing
        return result

    def profile_values(self, y: FloatArray) -> FloatArray:
        return np.stack([p.value(y[..., i]) for i, p in enumerate(self.profiles)], axis=-1)

    def profile_antiderivatives(self, y: FloatArray) -> FloatArray:
        return np.stack([p.antiderivative(y[..., i]) for i, p in enumerate(self.profiles)], axis=-1)

    def near_kink(self, x: ArrayLike, radius: ArrayLike) -> NDArray[np.bool_]:
        """
        判断 x 是否与某个轮廓折点的距离不超过 radius（在 y = Qx 坐标下逐分量比较）。

        Args:
            x: 形状 (..., d) 的点。
            radius: 可广播到 x 前导形状的距离。

        Returns:
            NDArray[np.bool_]: 前导形状的布尔数组。
        """
        y = self._unmix(x)
        r = np.asarray(radius, dtype=np.float64)
        hit = np.zeros(y.shape[:-1], dtype=bool)
        for i, profile in enumerate(self.profiles):
            kinks = profile.kinks()
            if kinks.size:
                distance = np.min(np.abs(y[..., i, None] - kinks), axis=-1)
                hit |= distance <= r
        return hit

    def gradient(self, x: ArrayLike) -> FloatArray:
        m, L = self.band.m, self.band.L
        y = self._unmix(x)
        return self._mix(m * y + (L - m) * self.profile_values(y))

    def value(self, x: ArrayLike) -> FloatArray:
        m, L = self.band.m, self.band.L
        y = self._unmix(x)
        result: FloatArray = m * quadratic(y) + (L - m) * np.sum(self.profile_antiderivatives(y), axis=-1)
        return result

    def __call__(self, x: ArrayLike) -> FloatArray:
        return self.gradient(x)


class FunctionFixture(BaseModel):
    """可复现的测试函数：生成参数连同构造出的函数一起保存。"""

    model_config = FROZEN

    kind: str
    seed: int
    d: int
    mix: bool = False
    function: SlopeRestrictedFunction

    @classmethod
    def generate(cls, kind: str, band: SlopeBand, d: int, seed: int, mix: bool = False) -> FunctionFixture:
        function = make_profile(kind, band, d, seed, mix=mix)
        return cls(kind=kind, seed=seed, d=d, mix=mix, function=function)


def quadratic(x: ArrayLike) -> FloatArray:
    """q(x) = ½‖x‖²，沿最后一个轴。"""
    arr = np.asarray(x, dtype=np.float64)
    result: FloatArray = 0.5 * np.sum(arr * arr, axis=-1)
    return result


def make_profile(kind: str, band: SlopeBand, d: int, seed: int, *, mix: bool = False) -> SlopeRestrictedFunction:
    """
    生成 𝒮⁰_{m,L} 中的随机函数。

    Args:
        kind: 已注册的轮廓类别名。
        band: 斜率区间。
        d: 维数。
        seed: 随机种子。
        mix: 是否叠加随机正交混合（仅 d ≥ 2）。

    Returns:
        SlopeRestrictedFunction: 由构造保证属于该函数类。

    Raises:
        ValueError: 未知类别或 d < 1。
    """
    factory = profile_kinds.require(kind)
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    rng = np.random.default_rng(seed)
    profiles = tuple(factory(rng) for _ in range(d))
    mixing = ortho_group.rvs(d, random_state=rng) if mix and d >= 2 else None
    return SlopeRestrictedFunction(band=band, profiles=profiles, mixing=mixing)


def deadzone_function(width: float, gain: float, d: int = 1) -> SlopeRestrictedFunction:
    """dzn_{l,L} 作为 𝒮⁰_{0,L} 的成员。"""
    return SlopeRestrictedFunction(band=SlopeBand(m=0.0, L=gain), profiles=(DeadzoneProfile(width=width),) * d)


def saturation_function(width: float, gain: float, d: int = 1) -> SlopeRestrictedFunction:
    """sat_{l,L} 作为 𝒮⁰_{0,L} 的成员。"""
    return SlopeRestrictedFunction(band=SlopeBand(m=0.0, L=gain), profiles=(SaturatingProfile(width=width),) * d)


def evaluate(f: SlopeRestrictedFunction, x: ArrayLike) -> tuple[float, FloatArray]:
    """返回 (f(x), ∇f(x))。"""
    point = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(f.value(point)), f.gradient(point)


def split_gradients(f: SlopeRestrictedFunction, x: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """返回 (∇f_m(x), ∇f^L(x)) = (∇f(x) - m·x, L·x - ∇f(x))。"""
    arr = np.asarray(x, dtype=np.float64)
    grad = f.gradient(arr)
    return grad - f.band.m * arr, f.band.L * arr - grad


def storage_V(f: SlopeRestrictedFunction, x: ArrayLike) -> FloatArray:
    """V(x) = (L-m)·f_m(x) - q(∇f_m(x))。"""
    arr = np.asarray(x, dtype=np.float64)
    m, L = f.band.m, f.band.L
    f_m = f.value(arr) - m * quadratic(arr)
    grad_fm, _ = split_gradients(f, arr)
    result: FloatArray = (L - m) * f_m - quadratic(grad_fm)
    return result


def supply_S(f: SlopeRestrictedFunction, u: ArrayLike, y: ArrayLike) -> FloatArray:
    """S(u, y) = ∇f_m(u)ᵀ[∇f^L(u) - ∇f^L(y)]。"""
    grad_fm_u, grad_fL_u = split_gradients(f, u)
    _, grad_fL_y = split_gradients(f, y)
    result: FloatArray = np.sum(grad_fm_u * (grad_fL_u - grad_fL_y), axis=-1)
    return result


def lift(f: SlopeRestrictedFunction, h: int) -> SlopeRestrictedFunction:
    """h 次提升 f̃(x₁, ..., x_h) = f(x₁) + ... + f(x_h)。"""
    if h < 1:
        raise ValueError(f"lifting horizon must be at least 1, got {h}")
    mixing = None if f.mixing is None else np.kron(np.eye(h), f.mixing)
    return SlopeRestrictedFunction(band=f.band, profiles=f.profiles * h, mixing=mixing)


def delta_rho_apply(f: SlopeRestrictedFunction, rho: float, zbar: ArrayLike) -> FloatArray:
    """指数加权算子 (Δ_ρ^f z̄)_t = ρ^{-t}·∇f(ρ^t·z̄_t)，时间沿第一个轴。"""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    signal = np.asarray(zbar, dtype=np.float64)
    return exp_weight(f.gradient(exp_weight(signal, rho)), 1.0 / rho)


def sample_ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> FloatArray:
    """在半径为 radius 的 dim 维球内均匀采样 count 个点。"""
    directions = rng.standard_normal((count, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.random((count, 1)) ** (1.0 / dim)
    result: FloatArray = directions / norms * radii
    return result


def check_subgradient_bounds(
    f: SlopeRestrictedFunction,
    x: ArrayLike,
    samples: int,
    *,
    radius: float = 10.0,
    seed: int = 0,
    tol: float = 1e-9,
) -> CheckReport:
    """
    检查二次上下界 f(x) + dᵀh + m·q(h) ≤ f(x+h) ≤ f(x) + dᵀh + L·q(h)，d = ∇f(x)。

    Args:
        f: 待检查的函数。
        x: 展开点。
        samples: 扰动 h 的采样数。
        radius: h 的采样半径。
        seed: 随机种子。
        tol: 相对容差。

    Returns:
        CheckReport: 违例按 1 + |f(x+h)| 归一化。
    """
    point = np.atleast_1d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(seed)
    steps = sample_ball(rng, samples, f.d, radius)
    base, grad = evaluate(f, point)
    shifted = f.value(point + steps)
    linear = base + steps @ grad
    q = quadratic(steps)
    lower = relative_violation(linear + f.band.m * q - shifted, shifted)
    upper = relative_violation(shifted - linear - f.band.L * q, shifted)
    return CheckReport(
        name="subgradient_bounds",
        samples=samples,
        worst_violation=max(worst_of(lower), worst_of(upper)),
        tolerance=tol,
        seed=seed,
        details={"lower": worst_of(lower), "upper": worst_of(upper)},
    )
