from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from src.config import settings
from src.core.model import SimulationDivergedError, deadzone_eval, saturation_eval, simulate_batch
from src.core.multiplier import (
    dhd_check,
    filter_realization,
    multiplier_is_feasible,
    running_cost_P,
    terminal_cost_Z,
)
from src.core.nonlin import (
    delta_rho_apply,
    lift,
    make_profile,
    sample_ball,
    split_gradients,
    storage_V,
    supply_S,
)
from src.core.registry import profile_kinds
from src.core.report import CheckReport, relative_violation, worst_of

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

    from numpy.typing import ArrayLike

    from src.core.arrays import FloatArray
    from src.core.certify import Certificate
    from src.core.model import AnalysisProblem, LtiSystem, SlopeBand
    from src.core.multiplier import FirMultiplier
    from src.core.nonlin import SlopeRestrictedFunction

CLOSED_LOOP_TOL = 1e-6
FINITE_DIFF_TOL = 1e-6


def _seed(seed: int | None) -> int:
    return settings.DEFAULT_SEED if seed is None else seed


def sample_mixed(rng: np.random.Generator, count: int, dim: int, radius: float) -> FloatArray:
    """逐坐标混合采样：零、对数均匀的小幅值与接近 radius 的大幅值各占约三分之一。"""
    regime = rng.integers(0, 3, size=(count, dim))
    small = 10.0 ** rng.uniform(-2.0, math.log10(max(radius, 1e-2)), size=(count, dim))
    large = radius * rng.uniform(0.5, 1.0, size=(count, dim))
    magnitude = np.where(regime == 0, 0.0, np.where(regime == 1, small, large))
    result: FloatArray = magnitude * rng.choice([-1.0, 1.0], size=(count, dim))
    return result


def check_dissipation(
    f: SlopeRestrictedFunction,
    n_samples: int = 10_000,
    *,
    radius: float | None = None,
    tol: float | None = None,
    seed: int | None = None,
) -> CheckReport:
    """
    检查耗散不等式 V(u) - V(y) ≤ S(u, y)。

    Args:
        f: 待检查的函数。
        n_samples: (u, y) 样本对数。
        radius: 采样半径。
        tol: 相对容差。
        seed: 随机种子。

    Returns:
        CheckReport: 违例按 1 + |V(u)| + |V(y)| + |S| 归一化。
    """
    seed = _seed(seed)
    radius = settings.SAMPLE_RADIUS if radius is None else radius
    rng = np.random.default_rng(seed)
    u = sample_ball(rng, n_samples, f.d, radius)
    y = sample_ball(rng, n_samples, f.d, radius)
    V_u, V_y, S = storage_V(f, u), storage_V(f, y), supply_S(f, u, y)
    violation = relative_violation(V_u - V_y - S, np.abs(V_u) + np.abs(V_y) + np.abs(S))
    return CheckReport(
        name="dissipation",
        samples=n_samples,
        worst_violation=worst_of(violation),
        tolerance=settings.CHECK_TOL if tol is None else tol,
        seed=seed,
        details={"radius": radius, "d": f.d},
    )


def check_static_qc(
    f: SlopeRestrictedFunction,
    M: ArrayLike,
    n_samples: int = 10_000,
    *,
    radius: float | None = None,
    tol: float | None = None,
    seed: int | None = None,
) -> CheckReport:
    """
    检查提升后的静态二次约束 ∇f̃_m(u)ᵀ(M⊗I)∇f̃^L(u) ≥ 0。

    一半样本取自球内均匀分布，另一半取自混合采样。M 非 d.h.d. 时只给出提示，
    此时出现的违例是预期内的信息。

    Args:
        f: 待检查的函数。
        M: h×h 方阵。
        n_samples: 样本数。
        radius: 采样半径。
        tol: 相对容差。
        seed: 随机种子。

    Returns:
        CheckReport: 违例按 1 + |∇f̃_m|ᵀ(|M|⊗I)|∇f̃^L| 归一化。
    """
    mat = np.asarray(M, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise ValueError(f"M must be a nonempty square matrix, got shape {mat.shape}")
    seed = _seed(seed)
    radius = settings.SAMPLE_RADIUS if radius is None else radius
    rng = np.random.default_rng(seed)
    h, d = mat.shape[0], f.d

    uniform_count = n_samples // 2
    u = np.vstack([
        sample_ball(rng, uniform_count, h * d, radius),
        sample_mixed(rng, n_samples - uniform_count, h * d, radius),
    ])
    grad_m, grad_L = split_gradients(lift(f, h), u)
    kernel = np.kron(mat, np.eye(d))
    form = np.einsum("ni,ij,nj->n", grad_m, kernel, grad_L)
    scale = np.einsum("ni,ij,nj->n", np.abs(grad_m), np.abs(kernel), np.abs(grad_L))

    warnings: tuple[str, ...] = ()
    is_dhd, margins = dhd_check(mat)
    if not is_dhd:
        logger.warning("M is not doubly hyperdominant ({}), violations are informative", margins)
        warnings = ("M is not doubly hyperdominant",)
    return CheckReport(
        name="static_qc",
        samples=n_samples,
        worst_violation=worst_of(-form / (1.0 + scale)),
        tolerance=settings.CHECK_TOL if tol is None else tol,
        seed=seed,
        details={"h": h, "d": d, "dhd": is_dhd},
        warnings=warnings,
    )


def check_iqc(
    f: SlopeRestrictedFunction,
    mult: FirMultiplier,
    band: SlopeBand,
    rho: float,
    n_signals: int = 50,
    T_max: int = 50,
    *,
    tol: float | None = None,
    seed: int | None = None,
) -> CheckReport:
    """
    检查 ρ-加权 IQC：对所有 T ≤ T_max，Σ_{t<T} v_tᵀPv_t - ξ_TᵀZ(E)ξ_T ≥ 0。

    z̄ 为随机信号，w̄ = Δ_ρ^f(z̄)，v、ξ 由乘子滤波器的状态空间实现给出。

    Raises:
        ValueError: (λ, E) 不满足 d.h.d. 约束，或 f 的斜率区间不在 band 内。
    """
    if not multiplier_is_feasible(mult, rho, settings.DHD_TOL):
        raise ValueError("the multiplier violates the doubly hyperdominant constraints")
    if f.band.m < band.m or f.band.L > band.L:
        raise ValueError(f"function band [{f.band.m}, {f.band.L}] is not inside [{band.m}, {band.L}]")
    if T_max < 1:
        raise ValueError(f"T_max must be positive, got {T_max}")
    seed = _seed(seed)
    rng = np.random.default_rng(seed)
    d = f.d
    realization = filter_realization(mult, band, d)
    P = running_cost_P(d)
    Z = terminal_cost_Z(mult.E, d)

    worst = -math.inf
    for _ in range(n_signals):
        zbar = rng.standard_normal((T_max, d)) * 10.0 ** rng.uniform(-1.0, 1.0)
        wbar = delta_rho_apply(f, rho, zbar)
        outputs, states = realization.simulate(np.hstack([zbar, wbar]))
        running = np.einsum("ti,ij,tj->t", outputs, P, outputs)
        terminal = np.einsum("ti,ij,tj->t", states[1:], Z, states[1:])
        total = np.cumsum(running) - terminal
        scale = np.cumsum(np.abs(running)) + np.abs(terminal)
        worst = max(worst, worst_of(relative_violation(-total, scale)))
    return CheckReport(
        name="iqc",
        samples=n_signals,
        worst_violation=0.0 if n_signals == 0 else worst,
        tolerance=settings.CHECK_TOL if tol is None else tol,
        seed=seed,
        details={"nu1": mult.nu1, "nu2": mult.nu2, "rho": rho, "T_max": T_max},
    )


def sample_ellipsoid_boundary(
    X: ArrayLike, count: int, rng: np.random.Generator, level: float = 1.0
) -> FloatArray:
    """在 {x : xᵀXx = level} 上采样 count 个点，方向服从各向同性分布。"""
    mat = np.asarray(X, dtype=np.float64)
    if level < 0:
        raise ValueError(f"level must be nonnegative, got {level}")
    if np.linalg.eigvalsh(mat)[0] <= 0:
        raise ValueError("X must be positive definite")
    directions = rng.standard_normal((count, mat.shape[0]))
    quad = np.einsum("ni,ij,nj->n", directions, mat, directions)
    result: FloatArray = directions * np.sqrt(level / quad)[:, None]
    return result


def _loop_nonlinearities(
    problem: AnalysisProblem, n_functions: int, seed: int
) -> list[tuple[str, LtiSystem, Callable[[FloatArray], FloatArray]]]:
    if problem.nonlinearity == "gradient":
        kinds = profile_kinds.names()
        loops: list[tuple[str, LtiSystem, Callable[[FloatArray], FloatArray]]] = []
        for i in range(n_functions):
            kind = kinds[i % len(kinds)]
            f = make_profile(kind, problem.band, problem.system.d, seed + i, mix=problem.system.d >= 2)
            loops.append((f"{kind}#{seed + i}", problem.system, f.gradient))
        return loops
    width, gain = problem.deadzone_parameters
    if problem.nonlinearity == "deadzone":
        return [("deadzone", problem.system, lambda z: deadzone_eval(z, width, gain))]
    return [("saturation", problem.system, lambda z: saturation_eval(z, width, gain))]


def check_closed_loop_performance(
    cert: Certificate,
    problem: AnalysisProblem,
    n_initial: int = 100,
    horizon: int = 200,
    *,
    n_functions: int = 20,
    seed: int | None = None,
    level: float = 1.0,
    initial_states: ArrayLike | None = None,
    margins: Mapping[str, float] | None = None,
    tol: float = CLOSED_LOOP_TOL,
) -> CheckReport:
    """
    从 x₀ᵀXx₀ = level 的初值仿真闭环并检查证书结论。

    对每个 T ≤ horizon 检查 αΣ_{t<T}‖z̄_t‖² + β‖z̄_T‖² ≤ x₀ᵀXx₀，
    β > 0 时检查 β‖z̄_t‖² ≤ x₀ᵀXx₀，扇区情形检查 |Hx̄_t| ≤ l·√(x₀ᵀXx₀)，
    并检查 ‖x̄_t‖² ≤ x₀ᵀXx₀ / max(m₁, m₂)。

    Args:
        cert: 证书。
        problem: 与证书匹配的问题。
        n_initial: 初值个数。
        horizon: 仿真步数。
        n_functions: gradient 回路中随机函数的个数。
        seed: 随机种子。
        level: 初值所在椭球面的水平，扇区情形不得超过 1。
        initial_states: 显式给定的初值，形状 (N, n)，给定时忽略 n_initial 与 level。
        margins: 衰减界使用的 LMI 裕度，缺省取证书记录的求解器裕度。
        tol: 相对容差。

    Returns:
        CheckReport: 各子项最坏违例见 details；X 不正定时直接判为失败。
    """
    if cert.H is not None and level > 1:
        raise ValueError("regional certificates only hold inside the unit sublevel set")
    seed = _seed(seed)
    rng = np.random.default_rng(seed)
    X = cert.X
    if np.linalg.eigvalsh(X)[0] <= 0:
        logger.warning("Certificate X block is not positive definite")
        return CheckReport(
            name="closed_loop",
            samples=0,
            worst_violation=math.inf,
            tolerance=tol,
            seed=seed,
            details={"reason": "X not positive definite"},
        )
    if initial_states is None:
        x0 = sample_ellipsoid_boundary(X, n_initial, rng, level)
    else:
        x0 = np.atleast_2d(np.asarray(initial_states, dtype=np.float64))
    budget = np.einsum("ni,ij,nj->n", x0, X, x0)

    margins = cert.solver.margins if margins is None else margins
    decay_margin = max(margins.get("dissipation", 0.0), margins.get("terminal", 0.0))
    rho, alpha, beta = problem.rho, problem.alpha, problem.beta
    weights = rho ** -np.arange(horizon + 1, dtype=np.float64)

    worst = {"performance": 0.0, "invariance": 0.0, "sector": 0.0, "decay": 0.0}
    diverged: list[str] = []
    loops = _loop_nonlinearities(problem, n_functions, seed)
    for name, system, nonlin in loops:
        try:
            states = simulate_batch(system, nonlin, x0, horizon)
        except SimulationDivergedError as e:
            logger.warning("Closed loop with {} diverged at step {}", name, e.step)
            diverged.append(name)
            continue
        xbar = states * weights[:, None, None]
        zbar_sq = np.sum((xbar @ system.C.T) ** 2, axis=-1)
        running = alpha * np.vstack([np.zeros((1, x0.shape[0])), np.cumsum(zbar_sq[:-1], axis=0)])
        performance = relative_violation(running[1:] + beta * zbar_sq[1:] - budget, budget)
        worst["performance"] = max(worst["performance"], worst_of(performance))
        if beta > 0:
            worst["invariance"] = max(worst["invariance"], worst_of(relative_violation(beta * zbar_sq - budget, budget)))
        if cert.H is not None:
            width = problem.deadzone_parameters[0]
            excess = np.abs(xbar @ cert.H.T)[..., 0] - width * np.sqrt(budget)
            worst["sector"] = max(worst["sector"], worst_of(excess / (1.0 + width)))
        if decay_margin > 0:
            bound = budget / decay_margin
            excess = np.sum(xbar**2, axis=-1) - bound
            worst["decay"] = max(worst["decay"], worst_of(relative_violation(excess, bound)))

    worst_violation = math.inf if diverged else max(worst.values())
    details: dict[str, float | int | str | bool] = {f"worst_{key}": value for key, value in worst.items()}
    details["loops"] = len(loops)
    if diverged:
        details["diverged"] = ",".join(diverged)
    return CheckReport(
        name="closed_loop",
        samples=int(x0.shape[0]) * len(loops),
        worst_violation=worst_violation,
        tolerance=tol,
        seed=seed,
        details=details,
    )


def finite_diff_check(
    f: SlopeRestrictedFunction,
    n_points: int = 200,
    step: float = 1e-5,
    *,
    radius: float | None = None,
    tol: float = FINITE_DIFF_TOL,
    seed: int | None = None,
) -> CheckReport:
    """
    用 f 的中心差分核对梯度。

    步长为 step·(1 + ‖x‖)。中心差分区间内含轮廓折点时只能精确到 ½·max(|m|, |L|)·h，
    仅这些样本中相对误差超过 tol 的分量改用该 Lipschitz 区间判断，计数记入 details。
    """
    seed = _seed(seed)
    radius = settings.SAMPLE_RADIUS if radius is None else radius
    rng = np.random.default_rng(seed)
    points = sample_ball(rng, n_points, f.d, radius)
    h = step * (1.0 + np.linalg.norm(points, axis=1))
    grad = f.gradient(points)
    eye = np.eye(f.d)

    central = np.empty_like(points)
    for i in range(f.d):
        shift = h[:, None] * eye[i]
        central[:, i] = (f.value(points + shift) - f.value(points - shift)) / (2.0 * h)

    error = np.abs(central - grad)
    strict = error - tol * (1.0 + np.abs(grad))
    lipschitz = 0.5 * max(abs(f.band.m), abs(f.band.L)) * h[:, None]
    relaxed_mask = (strict > 0) & f.near_kink(points, h)[:, None]
    relaxed = relative_violation(error - lipschitz - tol * (1.0 + np.abs(grad)), grad)
    violation = np.where(relaxed_mask, relaxed, relative_violation(strict, grad))
    return CheckReport(
        name="finite_difference",
        samples=n_points,
        worst_violation=worst_of(violation),
        tolerance=0.0,
        seed=seed,
        details={"relaxed": int(np.count_nonzero(relaxed_mask)), "step": step, "tol": tol},
    )
