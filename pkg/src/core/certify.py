from __future__ import annotations

import math
from typing import TYPE_CHECKING, Any, Literal, Self

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import block_diag

from src.config import settings
from src.core.arrays import Matrix, Vector
from src.core.model import FROZEN, AnalysisProblem, MultiplierShape, SlopeBand
from src.core.multiplier import (
    FirMultiplier,
    dhd_constraint_system,
    dhd_rows,
    filter_realization,
    running_cost_P,
    terminal_cost_Z,
    zero_multiplier,
)
from src.core.provider import SolverOptions, get_backend
from src.core.report import CheckReport, VerificationReport, relative_violation, worst_of
from src.core.sdp import AffineInequalities, AffineMatrixMap, MatrixInequality, SdpProblem, VariableBlock, VariableLayout
from src.core.validate import check_closed_loop_performance

if TYPE_CHECKING:
    from collections.abc import Iterable

    from numpy.typing import ArrayLike

    from src.core.arrays import FloatArray
    from src.core.provider import SolveResult
    from src.core.sdp import Values
    from src.worker.executor import SolveExecutor

type Variant = Literal["theorem4", "corollary5"]

DISSIPATION = "dissipation"
TERMINAL = "terminal"
AMPLITUDE = "amplitude"


class SolverFailureError(RuntimeError):
    """求解器数值失败（区别于确认不可行）。"""

    def __init__(self, raw_status: str, solver: str = "") -> None:
        super().__init__(f"solver {solver or '?'} failed with status {raw_status}")
        self.raw_status = raw_status
        self.solver = solver


class FingerprintMismatchError(ValueError):
    """证书与问题文件的指纹不一致。"""

    def __init__(self, expected: str, actual: str) -> None:
        super().__init__(f"certificate was issued for problem {expected[:12]}..., got {actual[:12]}...")
        self.expected = expected
        self.actual = actual


class LineSearchPoint(BaseModel):
    """μ 线搜索中一个网格点的结果。"""

    model_config = ConfigDict(frozen=True)

    mu: float
    status: Literal["optimal", "infeasible", "failed"]
    gamma: float | None = None
    raw_status: str = ""


class LineSearchFailedError(RuntimeError):
    """网格上没有任何可行点。"""

    def __init__(self, points: list[LineSearchPoint]) -> None:
        statuses = ", ".join(f"mu={p.mu:g}:{p.status}" for p in points)
        super().__init__(f"no feasible point on the mu grid ({statuses})")
        self.points = points


class Infeasible(BaseModel):
    """求解器确认不可行。"""

    model_config = ConfigDict(frozen=True)

    status: Literal["infeasible"] = "infeasible"
    raw_status: str
    variant: Variant
    mu: float | None = None
    problem_sha: str = ""


class InterconnectionMatrices(BaseModel):
    """乘子滤波器与加权对象的串联 (𝒜, ℬ, 𝒞(λ), 𝒟(λ), 𝒞p)。

    𝒜、ℬ、𝒞p 与 λ 无关；𝒞、𝒟 由 output_matrices 按给定乘子计算，关于 λ 仿射。
    """

    model_config = FROZEN

    calA: Matrix
    calB: Matrix
    calCp: Matrix
    C: Matrix
    band: SlopeBand
    shape: MultiplierShape
    n: int
    d: int

    @property
    def n_psi(self) -> int:
        return (self.shape.nu1 + self.shape.nu2) * self.d

    @property
    def size(self) -> int:
        return self.n_psi + self.n

    def output_matrices(self, mult: FirMultiplier) -> tuple[FloatArray, FloatArray]:
        """返回 (𝒞, 𝒟) = ([C_Ψ, D_Ψ[C; 0]], D_Ψ[0; I])。"""
        realization = filter_realization(mult, self.band, self.d)
        D_Psi = realization.D_Psi
        calC = np.hstack([realization.C_Psi, D_Psi[:, : self.d] @ self.C])
        calD: FloatArray = D_Psi[:, self.d :]
        return calC, calD


def build_interconnection(problem: AnalysisProblem, *, use_multiplier: bool = True) -> InterconnectionMatrices:
    """
    构造串联系统矩阵。

    𝒜 = [[A_Ψ, B_Ψ[C; 0]], [0, ρ⁻¹A]]，ℬ = [B_Ψ[0; I]; ρ⁻¹B]，𝒞p = [0, C]。

    Args:
        problem: 分析问题，饱和回路使用变换后的对象。
        use_multiplier: False 时滤波器为空（ν₁ = ν₂ = 0）。

    Returns:
        InterconnectionMatrices: 串联矩阵。

    Raises:
        ValueError: D ≠ 0。
    """
    system = problem.certified_system()
    system.require_strictly_proper()
    shape = problem.multiplier if use_multiplier else MultiplierShape()
    n, d, rho = system.n, system.d, problem.rho

    realization = filter_realization(zero_multiplier(shape.nu1, shape.nu2), problem.band, d)
    n_psi = realization.n_psi
    B_Psi = realization.B_Psi
    calA = np.block([
        [realization.A_Psi, B_Psi[:, :d] @ system.C],
        [np.zeros((n, n_psi)), system.A / rho],
    ])
    calB = np.vstack([B_Psi[:, d:], system.B / rho])
    calCp = np.hstack([np.zeros((d, n_psi)), system.C])
    return InterconnectionMatrices(
        calA=calA, calB=calB, calCp=calCp, C=system.C, band=problem.band, shape=shape, n=n, d=d
    )


def default_margin(problem: AnalysisProblem, eps: float | None = None) -> float:
    """严格性裕度 ε·(1 + ‖[A B; C 0]‖_F)。"""
    system = problem.certified_system()
    scale = float(np.linalg.norm(np.block([[system.A, system.B], [system.C, np.zeros((system.d, system.d))]])))
    return (settings.SOLVER_EPS if eps is None else eps) * (1.0 + scale)


class CertificationProgram:
    """一个已组装的半定规划及其来源信息。"""

    def __init__(
        self,
        sdp: SdpProblem,
        problem: AnalysisProblem,
        interconnection: InterconnectionMatrices,
        *,
        variant: Variant,
        use_multiplier: bool,
        mu: float,
        margin: float,
    ) -> None:
        self.sdp = sdp
        self.problem = problem
        self.interconnection = interconnection
        self.variant = variant
        self.use_multiplier = use_multiplier
        self.mu = mu
        self.margin = margin

    def values(self, x: ArrayLike) -> dict[str, FloatArray]:
        return self.sdp.layout.unpack(x)

    def lmi(self, name: str) -> MatrixInequality:
        for lmi in self.sdp.lmis:
            if lmi.name == name:
                return lmi
        raise KeyError(name)


def _multiplier_of(values: Values, shape: MultiplierShape, use_multiplier: bool) -> FirMultiplier:
    if not use_multiplier:
        return zero_multiplier()
    return FirMultiplier(nu1=shape.nu1, nu2=shape.nu2, lam=values["lambda"].ravel(), E=values["E"])


def _assemble(
    problem: AnalysisProblem, *, mu: float | None, use_multiplier: bool, eps: float | None
) -> CertificationProgram:
    icm = build_interconnection(problem, use_multiplier=use_multiplier)
    shape, n, d, N, n_psi = icm.shape, icm.n, icm.d, icm.size, icm.n_psi
    sector = mu is not None
    sector_mu = 0.0 if mu is None else mu

    blocks = [VariableBlock(name="calX", rows=N, cols=N, symmetric=True)]
    if use_multiplier:
        blocks += [
            VariableBlock(name="lambda", rows=1, cols=shape.length),
            VariableBlock(name="E", rows=shape.nu2, cols=shape.nu1),
        ]
    if sector:
        blocks.append(VariableBlock(name="H", rows=1, cols=n))
    blocks.append(VariableBlock(name="t", rows=1, cols=1))
    layout = VariableLayout(blocks)

    P = running_cost_P(d)
    AB = np.hstack([icm.calA, icm.calB])
    perf_out = np.hstack([icm.calCp, np.zeros((d, d))])
    alpha, beta = problem.alpha, problem.beta

    def dissipation(values: Values) -> FloatArray:
        X = values["calX"]
        calC, calD = icm.output_matrices(_multiplier_of(values, shape, use_multiplier))
        G = np.hstack([calC, calD])
        M = AB.T @ X @ AB - block_diag(X, np.zeros((d, d))) + G.T @ P @ G + alpha * perf_out.T @ perf_out
        if sector:
            R = np.zeros((2, N + 1))
            R[0, n_psi:N] = icm.C.ravel() - values["H"].ravel()
            R[1, N] = 1.0
            P_L = np.array([[0.0, problem.band.L], [problem.band.L, -2.0]])
            M = M + sector_mu * R.T @ P_L @ R
        result: FloatArray = M
        return result

    def storage(values: Values) -> FloatArray:
        E = values["E"] if use_multiplier else np.zeros((0, 0))
        return values["calX"] + block_diag(terminal_cost_Z(E, d), np.zeros((n, n)))

    def terminal(values: Values) -> FloatArray:
        result: FloatArray = storage(values) - beta * icm.calCp.T @ icm.calCp
        return result

    def amplitude(values: Values) -> FloatArray:
        width = problem.deadzone_parameters[0]
        row = np.hstack([np.zeros((1, n_psi)), values["H"]])
        return np.block([[width**2 * storage(values), row.T], [row, np.ones((1, 1))]])

    margin = default_margin(problem, eps)
    lmis = [
        MatrixInequality(DISSIPATION, AffineMatrixMap.from_function(dissipation, layout), "nsd", margin),
        MatrixInequality(TERMINAL, AffineMatrixMap.from_function(terminal, layout), "psd", margin),
    ]
    if sector:
        lmis.append(MatrixInequality(AMPLITUDE, AffineMatrixMap.from_function(amplitude, layout), "psd", margin))

    def epigraph(values: Values) -> FloatArray:
        return np.array([values["t"][0, 0] - np.trace(values["calX"][n_psi:, n_psi:])])

    parts = [AffineInequalities.from_function(epigraph, layout, ["epigraph[t - trace(X)]"])]
    if use_multiplier:
        parts.insert(0, dhd_constraint_system(shape.nu1, shape.nu2, problem.rho, layout))
    sdp = SdpProblem(layout, lmis, AffineInequalities.stack(*parts), layout.unit_vector("t"))

    variant: Variant = "corollary5" if sector else "theorem4"
    logger.debug(
        "Assembled {} (multiplier={}, mu={}): {} variables, blocks {}",
        variant,
        use_multiplier,
        mu,
        sdp.num_variables,
        sdp.block_sizes,
    )
    return CertificationProgram(
        sdp,
        problem,
        icm,
        variant=variant,
        use_multiplier=use_multiplier,
        mu=sector_mu,
        margin=margin,
    )


def assemble_theorem4(
    problem: AnalysisProblem, *, use_multiplier: bool = True, eps: float | None = None
) -> CertificationProgram:
    """
    组装全局指数稳定与性能分析的半定规划。

    变量为对称 𝒳、λ、E 与上图变量 t；约束为耗散块 ⪯ -εI、终端块 𝒳 + 𝒵(E) - β𝒞pᵀ𝒞p ⪰ εI、
    d.h.d. 线性约束以及 t ≥ trace(X)；目标为最小化 t。

    Args:
        problem: 分析问题。
        use_multiplier: False 时固定 λ = 0, E = 0 且不含滤波器状态。
        eps: 相对严格性裕度，缺省取配置值。
    """
    return _assemble(problem, mu=None, use_multiplier=use_multiplier, eps=eps)


def assemble_corollary5(
    problem: AnalysisProblem, mu: float, *, use_multiplier: bool = True, eps: float | None = None
) -> CertificationProgram:
    """
    组装带广义扇区条件的区域分析半定规划（μ 固定）。

    在耗散块上加 μ·Rᵀ P_L R，R = [[0, C - H, 0], [0, 0, 1]]，P_L = [[0, L], [L, -2]]；
    另加 [[l²(𝒳 + 𝒵(E)), (0 H)ᵀ], [(0 H), 1]] ⪰ εI。μ 固定后全部约束关于 (𝒳, λ, E, H) 仿射。

    Raises:
        ValueError: d ≠ 1、μ < 0 或问题未启用扇区条件。
    """
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"mu must be a finite nonnegative number, got {mu}")
    if not problem.sector_enabled:
        raise ValueError("the sector program needs an enabled sector condition")
    if problem.system.d != 1:
        raise ValueError(f"the generalized sector condition is scalar-channel only, got d={problem.system.d}")
    return _assemble(problem, mu=float(mu), use_multiplier=use_multiplier, eps=eps)


class SolverInfo(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    status: str
    margins: dict[str, float]
    seconds: float = 0.0
    inaccurate: bool = False


class Certificate(BaseModel):
    """求解得到的证书，附带可独立复核的全部数据。

    Attributes:
        calX: 串联系统的 Lyapunov 矩阵 𝒳。
        lam: 乘子系数 λ（JSON 字段 lambda）。
        E: 终端代价矩阵。
        mu: 扇区乘子 μ（theorem4 变体为 0）。
        H: 扇区条件的 1×n 行向量（仅区域分析）。
        gamma: 性能界，γ² ≥ trace(X)。
        problem_sha: 问题指纹。
        variant: 使用的程序。
        use_multiplier: 是否使用 O'Shea-Zames-Falb 乘子。
        eps: 组装时使用的绝对裕度。
        dimensions: n、n_psi、d。
        solver: 求解器名称、状态与实际裕度。
    """

    model_config = FROZEN

    calX: Matrix
    lam: Vector = Field(alias="lambda")
    E: Matrix
    mu: float = Field(ge=0)
    H: Matrix | None = None
    gamma: float = Field(gt=0)
    rho: float
    alpha: float
    beta: float
    band: SlopeBand
    shape: MultiplierShape
    problem_sha: str
    variant: Variant
    use_multiplier: bool = True
    eps: float = 0.0
    dimensions: dict[str, int]
    solver: SolverInfo

    @model_validator(mode="before")
    @classmethod
    def _restore_empty_E(cls, data: Any) -> Any:
        if isinstance(data, dict):
            shape = MultiplierShape.model_validate(data.get("shape", {}))
            if data.get("E") is None or np.size(data["E"]) == 0:
                data = {**data, "E": np.zeros((shape.nu2, shape.nu1))}
        return data

    @model_validator(mode="after")
    def _check_dimensions(self) -> Self:
        N = self.dimensions["n"] + self.dimensions["n_psi"]
        if self.calX.shape != (N, N):
            raise ValueError(f"calX must be {N}x{N}, got {self.calX.shape}")
        if self.lam.shape != (self.shape.length,):
            raise ValueError(f"lambda must have length {self.shape.length}, got {self.lam.shape}")
        if self.E.shape != (self.shape.nu2, self.shape.nu1):
            raise ValueError(f"E must be {self.shape.nu2}x{self.shape.nu1}, got {self.E.shape}")
        return self

    @property
    def X(self) -> FloatArray:
        """右下角 n×n 块，η₀ = (0, x₀) 时 η₀ᵀ𝒳η₀ = x₀ᵀXx₀。"""
        n_psi = self.dimensions["n_psi"]
        result: FloatArray = self.calX[n_psi:, n_psi:]
        return result

    @property
    def multiplier(self) -> FirMultiplier:
        return FirMultiplier(nu1=self.shape.nu1, nu2=self.shape.nu2, lam=self.lam, E=self.E)

    @property
    def size(self) -> float:
        """区域大小度量 1/γ。"""
        return 1.0 / self.gamma

    def values(self) -> dict[str, FloatArray]:
        """还原为决策变量取值（供重新组装后复核）。"""
        values: dict[str, FloatArray] = {"calX": self.calX, "t": np.array([[self.gamma**2]])}
        if self.use_multiplier:
            values["lambda"] = self.lam.reshape(1, -1)
            values["E"] = self.E
        if self.H is not None:
            values["H"] = self.H
        return values

    def _margin(self, name: str) -> float:
        margin = self.solver.margins.get(name)
        if margin is None or margin <= 0:
            raise ValueError(f"certificate has no positive {name} margin ({margin})")
        return margin

    def stability_constant(self) -> float:
        """c 使 Σ_t ‖x̄_t‖² ≤ c²‖x₀‖²，c² = λ_max(X) / m₁，m₁ 为耗散块裕度。"""
        return math.sqrt(float(np.linalg.eigvalsh(self.X)[-1]) / self._margin(DISSIPATION))

    def decay_bound(self, x0: ArrayLike) -> float:
        """
        K 使 ‖x_t‖ ≤ K·ρ^t 对所有 t 成立。

        K² = x₀ᵀXx₀ / max(m₁, m₂)，m₁、m₂ 为耗散块与终端块的实际裕度。
        区域分析时仅对 x₀ᵀXx₀ ≤ 1 的初值成立。
        """
        point = np.asarray(x0, dtype=np.float64).ravel()
        bound = max(self._margin(DISSIPATION), self._margin(TERMINAL))
        return math.sqrt(max(float(point @ self.X @ point), 0.0) / bound)


def _violated_margins(margins: dict[str, float], program: CertificationProgram) -> list[str]:
    names = [lmi.name for lmi in program.sdp.lmis if margins[lmi.name] <= 0]
    if margins.get("linear", 0.0) < -settings.DHD_TOL:
        names.append("linear")
    return names


def interpret_result(program: CertificationProgram, result: SolveResult) -> Certificate | Infeasible:
    """
    把求解结果转换为证书或不可行结论。

    Raises:
        SolverFailureError: 求解器数值失败。
    """
    if result.status == "infeasible":
        return Infeasible(
            raw_status=result.raw_status,
            variant=program.variant,
            mu=program.mu,
            problem_sha=program.problem.fingerprint(),
        )
    if result.status == "failed" or result.x is None:
        raise SolverFailureError(result.raw_status, result.solver)

    values = program.values(result.x)
    icm = program.interconnection
    calX = values["calX"]
    trace_X = float(np.trace(calX[icm.n_psi :, icm.n_psi :]))
    gamma = math.sqrt(max(float(values["t"][0, 0]), trace_X))
    if not gamma > 0:
        raise SolverFailureError(f"degenerate solution with trace(X) = {trace_X}", result.solver)

    if program.use_multiplier:
        lam, E = values["lambda"].ravel(), values["E"]
    else:
        lam, E = np.zeros(1), np.zeros((0, 0))
    margins = program.sdp.margins(result.x)
    violated = _violated_margins(margins, program)
    if violated:
        logger.warning(
            "Solver {} reported {} but margins {} are not strictly signed", result.solver, result.raw_status, violated
        )
    return Certificate(
        calX=calX,
        lam=lam,
        E=E,
        mu=program.mu,
        H=values.get("H"),
        gamma=gamma,
        rho=program.problem.rho,
        alpha=program.problem.alpha,
        beta=program.problem.beta,
        band=program.problem.band,
        shape=icm.shape,
        problem_sha=program.problem.fingerprint(),
        variant=program.variant,
        use_multiplier=program.use_multiplier,
        eps=program.margin,
        dimensions={"n": icm.n, "n_psi": icm.n_psi, "d": icm.d},
        solver=SolverInfo(
            name=result.solver,
            status=result.raw_status,
            margins=margins,
            seconds=result.seconds,
            inaccurate=bool(violated),
        ),
    )


def solve(program: CertificationProgram, options: SolverOptions | None = None) -> Certificate | Infeasible:
    """同步求解一个已组装的程序。"""
    options = options or SolverOptions()
    result = get_backend(options.backend).solve(program.sdp, options)
    return interpret_result(program, result)


class LineSearchResult(BaseModel):
    model_config = FROZEN

    best: Certificate
    profile: tuple[LineSearchPoint, ...]


def _normalize_grid(mu_grid: Iterable[float]) -> list[float]:
    grid = sorted({float(mu) for mu in mu_grid})
    if not grid:
        raise ValueError("mu grid must not be empty")
    if grid[0] < 0 or not all(math.isfinite(mu) for mu in grid):
        raise ValueError("mu grid values must be finite and nonnegative")
    return grid


async def mu_linesearch(
    problem: AnalysisProblem,
    mu_grid: Iterable[float],
    executor: SolveExecutor,
    *,
    use_multiplier: bool = True,
    eps: float | None = None,
) -> LineSearchResult:
    """
    在 μ 网格上并发求解区域分析程序，返回 γ 最小的证书及完整剖面。

    网格先去重排序，结果按网格下标合并；γ 相同时取较小的 μ。

    Raises:
        ValueError: 网格为空或含负值。
        LineSearchFailedError: 所有网格点都不可行或失败。
    """
    grid = _normalize_grid(mu_grid)
    programs = [assemble_corollary5(problem, mu, use_multiplier=use_multiplier, eps=eps) for mu in grid]
    results = await executor.run_all([program.sdp for program in programs])

    points: list[LineSearchPoint] = []
    best: Certificate | None = None
    for program, result in zip(programs, results, strict=True):
        try:
            outcome = interpret_result(program, result)
        except SolverFailureError as e:
            logger.warning("mu={} solver failure: {}", program.mu, e.raw_status)
            points.append(LineSearchPoint(mu=program.mu, status="failed", raw_status=e.raw_status))
            continue
        if isinstance(outcome, Infeasible):
            logger.debug("mu={} infeasible ({})", program.mu, outcome.raw_status)
            points.append(LineSearchPoint(mu=program.mu, status="infeasible", raw_status=outcome.raw_status))
            continue
        points.append(
            LineSearchPoint(mu=program.mu, status="optimal", gamma=outcome.gamma, raw_status=outcome.solver.status)
        )
        if best is None or outcome.gamma < best.gamma:
            best = outcome

    if best is None:
        raise LineSearchFailedError(points)
    logger.info("Line search over {} points: best mu={} gamma={:.6g}", len(grid), best.mu, best.gamma)
    return LineSearchResult(best=best, profile=tuple(points))


async def certify_problem(
    problem: AnalysisProblem,
    executor: SolveExecutor,
    *,
    mu_grid: Iterable[float] | None = None,
    use_multiplier: bool = True,
    eps: float | None = None,
) -> Certificate | Infeasible:
    """
    按问题的扇区开关选择全局程序或 μ 线搜索。

    Raises:
        SolverFailureError: 求解器失败且没有任何点给出不可行结论。
    """
    if problem.sector_enabled:
        try:
            search = await mu_linesearch(
                problem, settings.mu_grid if mu_grid is None else mu_grid, executor,
                use_multiplier=use_multiplier, eps=eps,
            )
        except LineSearchFailedError as e:
            if all(point.status == "failed" for point in e.points):
                raise SolverFailureError("; ".join(p.raw_status for p in e.points)) from e
            return Infeasible(
                raw_status=str(e), variant="corollary5", problem_sha=problem.fingerprint()
            )
        return search.best

    program = assemble_theorem4(problem, use_multiplier=use_multiplier, eps=eps)
    result = await executor.run(program.sdp)
    return interpret_result(program, result)


def rebuild_program(cert: Certificate, problem: AnalysisProblem) -> CertificationProgram:
    """按证书记录的程序与 μ 重新组装。"""
    if cert.variant == "corollary5":
        return assemble_corollary5(problem, cert.mu, use_multiplier=cert.use_multiplier)
    return assemble_theorem4(problem, use_multiplier=cert.use_multiplier)


def _parameter_check(cert: Certificate, program: CertificationProgram) -> CheckReport:
    problem = program.problem
    expected: dict[str, float] = {
        "rho": problem.rho,
        "alpha": problem.alpha,
        "beta": problem.beta,
        "m": problem.band.m,
        "L": problem.band.L,
    }
    recorded: dict[str, float] = {
        "rho": cert.rho,
        "alpha": cert.alpha,
        "beta": cert.beta,
        "m": cert.band.m,
        "L": cert.band.L,
    }
    mismatched = [key for key, value in expected.items() if not math.isclose(recorded[key], value, rel_tol=1e-12)]
    if cert.shape != program.interconnection.shape:
        mismatched.append("shape")
    details: dict[str, float | int | str | bool] = {}
    if mismatched:
        details["mismatched"] = ",".join(mismatched)
    return CheckReport(
        name="parameters",
        samples=len(expected) + 1,
        worst_violation=math.inf if mismatched else 0.0,
        tolerance=0.0,
        details=details,
    )


def verify_certificate(
    cert: Certificate,
    problem: AnalysisProblem,
    *,
    n_initial: int = 100,
    horizon: int = 200,
    n_functions: int = 20,
    seed: int | None = None,
    initial_states: ArrayLike | None = None,
) -> VerificationReport:
    """
    事后复核证书。

    先核对证书记录的 ρ、α、β、斜率区间与乘子形状是否与问题一致；随后在证书取值处
    重新计算各矩阵块的极端特征值（须严格超过组装裕度的一半）、用问题的 ρ 精确复核
    d.h.d. 约束、检查 trace(X) ≤ γ²，并以重新计算的裕度从 x₀ᵀXx₀ = 1 的边界点出发仿真闭环。
    证书中记录的求解器裕度不参与判断。

    Raises:
        FingerprintMismatchError: 证书不是针对该问题签发的。
    """
    actual = problem.fingerprint()
    if cert.problem_sha != actual:
        raise FingerprintMismatchError(cert.problem_sha, actual)
    seed = settings.DEFAULT_SEED if seed is None else seed

    program = rebuild_program(cert, problem)
    x = program.sdp.layout.pack(cert.values())
    margins = program.sdp.margins(x)
    checks: list[CheckReport] = [_parameter_check(cert, program)]
    for lmi in program.sdp.lmis:
        attained = margins[lmi.name]
        floor = 0.5 * (cert.eps if cert.eps > 0 else lmi.margin)
        checks.append(
            CheckReport(
                name=f"lmi:{lmi.name}",
                samples=1,
                worst_violation=floor - attained,
                tolerance=0.0,
                details={"margin": attained, "floor": floor, "size": lmi.mapping.dim, "sense": lmi.sense},
            )
        )

    if cert.use_multiplier:
        rows = dhd_rows(cert.lam, cert.E, cert.shape.nu1, cert.shape.nu2, problem.rho)
        checks.append(
            CheckReport(
                name="dhd",
                samples=int(rows.size),
                worst_violation=worst_of(-rows),
                tolerance=settings.DHD_TOL,
            )
        )

    trace_X = float(np.trace(cert.X))
    checks.append(
        CheckReport(
            name="trace_bound",
            samples=1,
            worst_violation=float(relative_violation(trace_X - cert.gamma**2, cert.gamma**2)),
            tolerance=settings.CHECK_TOL,
            details={"trace": trace_X, "gamma_squared": cert.gamma**2},
        )
    )

    checks.append(
        check_closed_loop_performance(
            cert,
            problem,
            n_initial=n_initial,
            horizon=horizon,
            n_functions=n_functions,
            seed=seed,
            initial_states=initial_states,
            margins=margins,
        )
    )
    report = VerificationReport(checks=tuple(checks))
    for name in report.failing:
        logger.warning("Certificate check {} failed", name)
    return report

