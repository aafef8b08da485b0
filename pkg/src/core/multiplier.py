from __future__ import annotations

from typing import TYPE_CHECKING, Any, Self

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator
from scipy.linalg import block_diag, toeplitz
from scipy.optimize import linprog

from src.core.arrays import Matrix, Vector
from src.core.model import FROZEN, SlopeBand, sector_transform_matrix
from src.core.sdp import AffineInequalities, VariableBlock, VariableLayout

if TYPE_CHECKING:
    from numpy.typing import ArrayLike

    from src.core.arrays import FloatArray
    from src.core.sdp import Values


LP_MARGIN = 1e-6


class FirMultiplier(BaseModel):
    """FIR O'Shea-Zames-Falb 乘子 (λ, E)。

    λ 的排列固定为 (λ_{ν₁}, ..., λ₁ | λ₀ | λ₋₁, ..., λ₋ν₂)，即 λ_k 位于下标 ν₁ - k。

    Attributes:
        nu1: 因果部分长度 ν₁。
        nu2: 反因果部分长度 ν₂。
        lam: 系数向量，JSON 字段名为 lambda。
        E: ν₂×ν₁ 终端代价矩阵（ν₁ 或 ν₂ 为 0 时为空）。
    """

    model_config = FROZEN

    nu1: int = Field(ge=0)
    nu2: int = Field(ge=0)
    lam: Vector = Field(alias="lambda")
    E: Matrix

    @model_validator(mode="before")
    @classmethod
    def _default_terminal_cost(cls, data: Any) -> Any:
        if isinstance(data, dict):
            E = data.get("E")
            if E is None or np.asarray(E).size == 0:
                data = {**data, "E": np.zeros((int(data.get("nu2", 0)), int(data.get("nu1", 0))))}
        return data

    @model_validator(mode="after")
    def _check_shape(self) -> Self:
        if self.lam.shape != (self.length,):
            raise ValueError(f"lambda must have length {self.length}, got {self.lam.shape[0]}")
        if self.E.shape != (self.nu2, self.nu1):
            raise ValueError(f"E must be {self.nu2}x{self.nu1}, got {self.E.shape}")
        return self

    @property
    def length(self) -> int:
        return self.nu1 + 1 + self.nu2

    @property
    def lambda0(self) -> float:
        return float(self.lam[self.nu1])

    @property
    def lambda1(self) -> FloatArray:
        """(λ_{ν₁}, ..., λ₁)。"""
        return self.lam[: self.nu1]

    @property
    def lambda2(self) -> FloatArray:
        """(λ₋₁, ..., λ₋ν₂)。"""
        return self.lam[self.nu1 + 1 :]

    def coefficient(self, k: int) -> float:
        """λ_k，超出 [-ν₂, ν₁] 时为 0。"""
        if -self.nu2 <= k <= self.nu1:
            return float(self.lam[self.nu1 - k])
        return 0.0

    @classmethod
    def static(cls, nu1: int = 0, nu2: int = 0, lambda0: float = 1.0) -> FirMultiplier:
        """只有 λ₀ 的乘子。"""
        lam = np.zeros(nu1 + 1 + nu2)
        lam[nu1] = lambda0
        return cls(nu1=nu1, nu2=nu2, lam=lam, E=np.zeros((nu2, nu1)))


class FilterRealization(BaseModel):
    """乘子滤波器 Ψ 的状态空间实现。

    输入为 (z, w)，输出顺序固定为 v = (y₁, u₁, y₂, u₂)，
    状态 ξ = (ξ₁, ξ₂)，ξⱼ 保存 uⱼ 最近 νⱼ 个历史值（最旧的在前）。
    """

    model_config = FROZEN

    A_Psi: Matrix
    B_Psi: Matrix
    C_Psi: Matrix
    D_Psi: Matrix
    nu1: int
    nu2: int
    d: int

    @property
    def n_psi(self) -> int:
        return (self.nu1 + self.nu2) * self.d

    def simulate(self, inputs: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """
        从零初态驱动滤波器。

        Args:
            inputs: 形状 (T, 2d) 的输入序列 (z_t, w_t)。

        Returns:
            tuple[FloatArray, FloatArray]: 输出 (T, 4d) 与状态 (T+1, n_Ψ)。
        """
        signal = np.asarray(inputs, dtype=np.float64).reshape(-1, 2 * self.d)
        horizon = signal.shape[0]
        states = np.zeros((horizon + 1, self.n_psi))
        outputs = np.empty((horizon, 4 * self.d))
        for t in range(horizon):
            outputs[t] = self.C_Psi @ states[t] + self.D_Psi @ signal[t]
            states[t + 1] = self.A_Psi @ states[t] + self.B_Psi @ signal[t]
        return outputs, states


class DhdMargins(BaseModel):
    """d.h.d. 检查的最坏项。"""

    model_config = FROZEN

    max_offdiagonal: float
    min_row_sum: float
    min_col_sum: float

    @property
    def slack(self) -> float:
        return min(-self.max_offdiagonal, self.min_row_sum, self.min_col_sum)


def _check_lambda(lam: ArrayLike, nu1: int, nu2: int) -> FloatArray:
    arr = np.asarray(lam, dtype=np.float64).ravel()
    if nu1 < 0 or nu2 < 0:
        raise ValueError("multiplier lengths must be nonnegative")
    if arr.shape[0] != nu1 + 1 + nu2:
        raise ValueError(f"lambda must have length {nu1 + 1 + nu2}, got {arr.shape[0]}")
    return arr


def toeplitz_T(lam: ArrayLike, nu1: int, nu2: int, h: int) -> FloatArray:
    """
    h×h Toeplitz 矩阵 T^h(λ)，(i, j) 元为 λ_{i-j}。

    第一列为 (λ₀, λ₁, ..., λ_{ν₁}, 0, ...)，第一行为 (λ₀, λ₋₁, ..., λ₋ν₂, 0, ...)。
    """
    arr = _check_lambda(lam, nu1, nu2)
    if h < 1:
        raise ValueError(f"Toeplitz size must be positive, got {h}")
    column = np.zeros(h)
    row = np.zeros(h)
    causal = arr[nu1::-1]
    anticausal = arr[nu1:]
    column[: min(h, nu1 + 1)] = causal[:h]
    row[: min(h, nu2 + 1)] = anticausal[:h]
    result: FloatArray = toeplitz(column, row)
    return result


def toeplitz_blocks(lam: ArrayLike, nu1: int, nu2: int) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """按行 (ν₁+1)+ν₂、列 (ν₂+1)+ν₁ 划分 T^{h₀}(λ)，返回 (T11, T12, T21, T22)。"""
    T = toeplitz_T(lam, nu1, nu2, nu1 + 1 + nu2)
    r, c = nu1 + 1, nu2 + 1
    return T[:r, c:], T[:r, :c], T[r:, c:], T[r:, :c]


def filter_toeplitz(mult: FirMultiplier, h: int) -> tuple[FloatArray, FloatArray]:
    """
    提升后的滤波器直通矩阵 (D₁^h, D₂^h)，满足 y₁ʰ = D₁^h u₁ʰ, y₂ʰ = D₂^h u₂ʰ。

    二者均为下三角 Toeplitz 矩阵，且 (D₂^h)ᵀ + D₁^h = T^h(λ)。
    """
    col1 = np.zeros(h)
    col2 = np.zeros(h)
    for k in range(min(h, mult.nu1 + 1)):
        col1[k] = mult.coefficient(k)
    for k in range(1, min(h, mult.nu2 + 1)):
        col2[k] = mult.coefficient(-k)
    zeros = np.zeros(h)
    return toeplitz(col1, zeros), toeplitz(col2, zeros)


def weight_F(rho: float, h: int) -> FloatArray:
    """F^h_{ρ⁻¹} = diag(1, ρ⁻¹, ..., ρ^{-(h-1)})。"""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return np.diag(rho ** -np.arange(h, dtype=np.float64))


def jordan_block(nu: int) -> FloatArray:
    """ν×ν 上幂零 Jordan 块。"""
    return np.eye(nu, k=1)


def _last_unit(nu: int) -> FloatArray:
    e = np.zeros((nu, 1))
    if nu:
        e[-1, 0] = 1.0
    return e


def B_matrix(nu: int, h: int) -> FloatArray:
    """B^h = (J^{h-1}e, ..., Je, e)，即 h 步后滤波器状态关于输入的映射。"""
    if nu == 0 or h == 0:
        return np.zeros((nu, h))
    J = jordan_block(nu)
    e = _last_unit(nu)
    return np.hstack([np.linalg.matrix_power(J, h - 1 - c) @ e for c in range(h)])


def filter_realization(mult: FirMultiplier, band: SlopeBand, d: int) -> FilterRealization:
    """
    构造乘子滤波器的状态空间矩阵。

    A_Ψ = blkdiag(J_{ν₁}, J_{ν₂})⊗I_d，B_Ψ = [blkdiag(e_{ν₁}, e_{ν₂})·S_{m,L}]⊗I_d。
    y₁ 行读出 (λ_{ν₁}, ..., λ₁)，y₂ 行读出 (λ₋ν₂, ..., λ₋₁)，与 ξ 中历史值的先后顺序一致。

    Args:
        mult: 乘子。
        band: 斜率区间。
        d: 通道数。

    Returns:
        FilterRealization: 实现矩阵。
    """
    if d < 1:
        raise ValueError(f"channel dimension must be positive, got {d}")
    nu1, nu2 = mult.nu1, mult.nu2
    S = sector_transform_matrix(band)
    identity = np.eye(d)

    A_Psi = np.kron(block_diag(jordan_block(nu1), jordan_block(nu2)), identity)
    B_Psi = np.kron(block_diag(_last_unit(nu1), _last_unit(nu2)) @ S, identity)

    readout = np.zeros((4, nu1 + nu2))
    readout[0, :nu1] = mult.lambda1
    readout[2, nu1:] = mult.lambda2[::-1]
    C_Psi = np.kron(readout, identity)

    feedthrough = np.array([[mult.lambda0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]) @ S
    D_Psi = np.kron(feedthrough, identity)

    return FilterRealization(A_Psi=A_Psi, B_Psi=B_Psi, C_Psi=C_Psi, D_Psi=D_Psi, nu1=nu1, nu2=nu2, d=d)


def running_cost_P(d: int) -> FloatArray:
    """vᵀPv = 2(y₁ᵀu₂ + u₁ᵀy₂)，v = (y₁, u₁, y₂, u₂)。"""
    if d < 1:
        raise ValueError(f"channel dimension must be positive, got {d}")
    swap = np.kron(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(d))
    zero = np.zeros((2 * d, 2 * d))
    return np.block([[zero, swap], [swap, zero]])


def terminal_cost_Z(E: ArrayLike, d: int) -> FloatArray:
    """Z(E) = [[0, (E⊗I)ᵀ], [E⊗I, 0]]。"""
    lifted = np.kron(np.atleast_2d(np.asarray(E, dtype=np.float64)), np.eye(d))
    n2, n1 = lifted.shape
    return np.block([[np.zeros((n1, n1)), lifted.T], [lifted, np.zeros((n2, n2))]])


def dhd_check(M: ArrayLike, tol: float = 0.0) -> tuple[bool, DhdMargins]:
    """
    检查 M 是否双超占优（d.h.d.）。

    Args:
        M: 方阵。
        tol: 容差。

    Returns:
        tuple[bool, DhdMargins]: 是否满足以及最坏的非对角元、行和、列和。
    """
    mat = np.asarray(M, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"d.h.d. check needs a square matrix, got shape {mat.shape}")
    offdiag = mat[~np.eye(mat.shape[0], dtype=bool)]
    margins = DhdMargins(
        max_offdiagonal=float(offdiag.max()) if offdiag.size else 0.0,
        min_row_sum=float(mat.sum(axis=1).min()) if mat.size else 0.0,
        min_col_sum=float(mat.sum(axis=0).min()) if mat.size else 0.0,
    )
    ok = margins.max_offdiagonal <= tol and margins.min_row_sum >= -tol and margins.min_col_sum >= -tol
    return ok, margins


def lifted_multiplier_matrix(mult: FirMultiplier, rho: float, h: int) -> FloatArray:
    """M^h = F^h [T^h(λ) - (B₂^h)ᵀ E B₁^h] F^h。"""
    F = weight_F(rho, h)
    bracket = toeplitz_T(mult.lam, mult.nu1, mult.nu2, h) - B_matrix(mult.nu2, h).T @ mult.E @ B_matrix(mult.nu1, h)
    result: FloatArray = F @ bracket @ F
    return result


def multiplier_layout(nu1: int, nu2: int) -> VariableLayout:
    """(λ, E) 的决策变量布局：θ = (λ, 按行展开的 E)。"""
    return VariableLayout([
        VariableBlock(name="lambda", rows=1, cols=nu1 + 1 + nu2),
        VariableBlock(name="E", rows=nu2, cols=nu1),
    ])


def dhd_labels(nu1: int, nu2: int) -> list[str]:
    h0 = nu1 + 1 + nu2
    labels = [f"offdiag[{i},{j}]" for i in range(h0) for j in range(h0) if i != j]
    labels += [f"rowsum[{i}]" for i in range(h0)]
    labels += [f"colsum[{j}]" for j in range(h0)]
    labels += ["weighted_sum[rho^k]", "weighted_sum[rho^-k]"]
    return labels


def dhd_rows(lam: ArrayLike, E: ArrayLike, nu1: int, nu2: int, rho: float) -> FloatArray:
    """d.h.d. 约束系统各行的取值，顺序与 dhd_labels 一致；全部 ≥ 0 即可行。"""
    arr = _check_lambda(lam, nu1, nu2)
    mult = FirMultiplier(nu1=nu1, nu2=nu2, lam=arr, E=np.asarray(E, dtype=np.float64).reshape(nu2, nu1))
    h0 = nu1 + 1 + nu2
    M = lifted_multiplier_matrix(mult, rho, h0)
    offdiag = -M[~np.eye(h0, dtype=bool)]
    powers = nu1 - np.arange(h0, dtype=np.float64)
    weighted = np.array([arr @ rho**powers, arr @ rho**-powers])
    return np.concatenate([offdiag, M.sum(axis=1), M.sum(axis=0), weighted])


def dhd_constraint_system(
    nu1: int, nu2: int, rho: float, layout: VariableLayout | None = None
) -> AffineInequalities:
    """
    (lp1)/(lp2) 约束：加权 Toeplitz 矩阵双超占优且两个加权系数和非负。

    所有约束关于 (λ, E) 仿射，以 Gθ + g ≥ 0 的形式给出。

    Args:
        nu1: ν₁。
        nu2: ν₂。
        rho: 衰减率，取值 (0, 1]。
        layout: 含 "lambda" 与 "E" 块的变量布局，缺省为 multiplier_layout。

    Returns:
        AffineInequalities: 带标签的不等式组。
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    layout = layout or multiplier_layout(nu1, nu2)

    def rows(values: Values) -> FloatArray:
        return dhd_rows(values["lambda"], values["E"], nu1, nu2, rho)

    return AffineInequalities.from_function(rows, layout, dhd_labels(nu1, nu2))


def multiplier_is_feasible(mult: FirMultiplier, rho: float, tol: float = 0.0) -> bool:
    return bool(np.all(dhd_rows(mult.lam, mult.E, mult.nu1, mult.nu2, rho) >= -tol))


def random_feasible_multiplier(
    nu1: int, nu2: int, rho: float, rng: np.random.Generator, slack: float = 0.1
) -> FirMultiplier:
    """
    构造性地采样满足 d.h.d. 约束的乘子，归一化为 λ₀ = 1。

    非零阶系数取非正值，E 的非对角位置不小于对应 Toeplitz 元，
    最后把 λ₀ 提高到使全部行和、列和及加权和至少留出 slack。

    Args:
        nu1: ν₁。
        nu2: ν₂。
        rho: 衰减率。
        rng: 随机数生成器。
        slack: 和式约束的最小余量（归一化前）。

    Returns:
        FirMultiplier: 可行乘子。
    """
    h0 = nu1 + 1 + nu2
    lam = -rng.exponential(1.0, h0)
    lam[rng.random(h0) < 0.2] = 0.0
    lam[nu1] = 0.0

    E = np.zeros((nu2, nu1))
    T = toeplitz_T(lam, nu1, nu2, h0)
    for i in range(nu2):
        for j in range(nu1):
            r, c = nu1 + 1 + i, nu2 + 1 + j
            if r == c:
                E[i, j] = rng.normal(0.0, 0.5)
            else:
                E[i, j] = T[r, c] + rng.exponential(0.5)

    system = dhd_constraint_system(nu1, nu2, rho)
    theta = np.concatenate([lam, E.ravel()])
    values = system.evaluate(theta)
    weights = system.G[:, nu1]
    needed = max(0.0, *(-values[weights > 0] / weights[weights > 0]))
    lam[nu1] = needed + slack + float(rng.exponential(0.5))
    return FirMultiplier(nu1=nu1, nu2=nu2, lam=lam / lam[nu1], E=E / lam[nu1])


def find_feasible_multiplier(
    nu1: int, nu2: int, rho: float, objective: ArrayLike | None = None, bound: float = 10.0
) -> FirMultiplier:
    """
    在 d.h.d. 约束集上求解线性规划，得到 λ₀ = 1 的乘子。

    缺省目标使非零阶系数之和尽量小（即尽量偏离静态乘子）。

    Args:
        nu1: ν₁。
        nu2: ν₂。
        rho: 衰减率。
        objective: θ = (λ, vec E) 上的线性目标。
        bound: 各分量的盒约束。

    Raises:
        ValueError: 线性规划未能求得可行解。
    """
    system = dhd_constraint_system(nu1, nu2, rho)
    size = system.G.shape[1]
    if objective is None:
        cost = np.zeros(size)
        cost[: nu1 + 1 + nu2] = 1.0
        cost[nu1] = 0.0
    else:
        cost = np.asarray(objective, dtype=np.float64)
    A_eq = np.zeros((1, size))
    A_eq[0, nu1] = 1.0
    # 非结构性约束留出 LP_MARGIN，使返回值在 LP 求解精度之外仍严格可行
    active = np.any(system.G != 0, axis=1)
    result = linprog(
        cost,
        A_ub=-system.G,
        b_ub=system.g - LP_MARGIN * active,
        A_eq=A_eq,
        b_eq=[1.0],
        bounds=[(-bound, bound)] * size,
        method="highs",
    )
    if result.status != 0:
        logger.warning("Multiplier LP failed for nu=({}, {}), rho={}: {}", nu1, nu2, rho, result.message)
        raise ValueError(f"multiplier LP failed: {result.message}")
    theta = result.x
    h0 = nu1 + 1 + nu2
    return FirMultiplier(nu1=nu1, nu2=nu2, lam=theta[:h0], E=theta[h0:].reshape(nu2, nu1))


def split_to_inputs(u1: FloatArray, u2: FloatArray, band: SlopeBand) -> FloatArray:
    """由 (u₁, u₂) 反求滤波器输入 (z, w) = S⁻¹(u₁, u₂)，逐时刻逐通道。"""
    S_inv = np.linalg.inv(sector_transform_matrix(band))
    stacked = np.stack([u1, u2], axis=1)
    zw = np.einsum("ij,tjd->tid", S_inv, stacked)
    result: FloatArray = zw.reshape(u1.shape[0], -1)
    return result


def lifted_form_oracle(
    mult: FirMultiplier, band: SlopeBand, d: int, u1_block: ArrayLike, u2_block: ArrayLike
) -> tuple[float, float]:
    """
    比较仿真得到的 ½Σ_{t<h} v_tᵀPv_t - ½ξ_hᵀZ(E)ξ_h 与闭式 u₂ᵀ[(T^h - B₂ᵀEB₁)⊗I_d]u₁。

    Args:
        mult: 乘子。
        band: 斜率区间。
        d: 通道数。
        u1_block: 形状 (h, d) 的 u₁ 序列。
        u2_block: 形状 (h, d) 的 u₂ 序列。

    Returns:
        tuple[float, float]: (仿真值, 闭式值)。

    Raises:
        ValueError: 两段序列长度不一致。
    """
    u1 = np.asarray(u1_block, dtype=np.float64).reshape(-1, d)
    u2 = np.asarray(u2_block, dtype=np.float64).reshape(-1, d)
    if u1.shape != u2.shape:
        raise ValueError(f"horizon mismatch: u1 has shape {u1.shape}, u2 has shape {u2.shape}")
    h = u1.shape[0]

    realization = filter_realization(mult, band, d)
    outputs, states = realization.simulate(split_to_inputs(u1, u2, band))
    P = running_cost_P(d)
    Z = terminal_cost_Z(mult.E, d)
    running = 0.5 * float(np.einsum("ti,ij,tj->", outputs, P, outputs))
    terminal = 0.5 * float(states[h] @ Z @ states[h])

    kernel = toeplitz_T(mult.lam, mult.nu1, mult.nu2, h) - B_matrix(mult.nu2, h).T @ mult.E @ B_matrix(mult.nu1, h)
    closed_form = float(u2.ravel() @ np.kron(kernel, np.eye(d)) @ u1.ravel())
    return running - terminal, closed_form


def zero_multiplier(nu1: int = 0, nu2: int = 0) -> FirMultiplier:
    """λ = 0, E = 0（不使用乘子）。"""
    return FirMultiplier(nu1=nu1, nu2=nu2, lam=np.zeros(nu1 + 1 + nu2), E=np.zeros((nu2, nu1)))
