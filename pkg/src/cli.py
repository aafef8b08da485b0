from __future__ import annotations

import argparse
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Self

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config import settings
from src.core.certify import (
    Certificate,
    FingerprintMismatchError,
    Infeasible,
    SolverFailureError,
    certify_problem,
    verify_certificate,
)
from src.core.model import SimulationDivergedError, deadzone_eval, saturation_eval, simulate_loop
from src.core.nonlin import make_profile
from src.core.provider import SolverOptions
from src.infra.log import init_logger
from src.infra.repository import load_certificate, load_problem, save_certificate
from src.infra.writer import ResultWriter
from src.worker.executor import SolveExecutor
from src.worker.manager import CSV_HEADER, VARIANTS, SweepManager

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from src.core.arrays import FloatArray
    from src.core.model import AnalysisProblem
    from src.worker.manager import SweepVariant

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_CHECK_FAILED = 3

type Command = Literal["certify", "sweep", "simulate", "validate"]


def parse_float_list(text: str) -> list[float]:
    """解析逗号分隔的浮点数列表。"""
    return [float(item) for item in text.split(",") if item.strip()]


def parse_grid(text: str) -> list[float]:
    """解析 a:b:step，两端包含。"""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must look like a:b:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"grid {text!r} needs step > 0 and b >= a")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 12) for i in range(count)]


class RunConfig(BaseModel):
    """一次命令行调用的配置。

    Attributes:
        command: 子命令。
        problem: 问题文件路径。
        out: 输出目录。
        eps: 严格性相对裕度。
        mu_grid: μ 线搜索网格。
        time_limit: 单次求解时间上限。
        seed: 随机种子。
        verbose: 是否输出调试日志。
    """

    model_config = ConfigDict(frozen=True)

    command: Command
    problem: Path
    out: Path = Path("out")
    eps: float = Field(default_factory=lambda: settings.SOLVER_EPS, gt=0)
    mu_grid: list[float] = Field(default_factory=lambda: settings.mu_grid)
    time_limit: float | None = Field(default_factory=lambda: settings.SOLVER_TIME_LIMIT)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    verbose: bool = False
    grid_L: list[float] | None = None
    variant: Literal["sector", "ozf", "both"] = "ozf"
    horizon: int = Field(default=200, ge=0)
    certificate: Path | None = None
    x0: list[float] | None = None
    nonlinearity: str | None = None
    gain: float | None = Field(default=None, ge=0)
    timing: bool = True

    @field_validator("mu_grid")
    @classmethod
    def _check_grid(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("mu grid must not be empty")
        if any(mu < 0 for mu in value):
            raise ValueError("mu grid values must be nonnegative")
        return value

    @model_validator(mode="after")
    def _check_paths(self) -> Self:
        if not self.problem.is_file():
            raise ValueError(f"problem file {self.problem} does not exist")
        if self.command == "validate" and (self.certificate is None or not self.certificate.is_file()):
            raise ValueError("validate needs an existing --certificate file")
        if self.command == "sweep" and not self.grid_L:
            raise ValueError("sweep needs --grid-L a:b:step")
        return self

    @property
    def variants(self) -> tuple[SweepVariant, ...]:
        if self.variant == "both":
            return VARIANTS
        return (self.variant,)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(eps=self.eps, time_limit=self.time_limit)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ozfcertifier", description="稳定性与性能证书工具")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--problem", type=Path, required=True)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int)
        p.add_argument("--verbose", action="store_true")

    def solver(p: argparse.ArgumentParser) -> None:
        p.add_argument("--eps", type=float)
        p.add_argument("--mu-grid", type=parse_float_list)
        p.add_argument("--time-limit", type=float)

    certify = sub.add_parser("certify", help="certify a single problem")
    common(certify)
    solver(certify)
    certify.add_argument("--variant", choices=("sector", "ozf"), default="ozf")

    sweep = sub.add_parser("sweep", help="sweep the slope bound L")
    common(sweep)
    solver(sweep)
    sweep.add_argument("--grid-L", type=parse_grid, required=True)
    sweep.add_argument("--variant", choices=("sector", "ozf", "both"), default="both")
    sweep.add_argument("--no-timing", action="store_true")

    simulate = sub.add_parser("simulate", help="simulate the closed loop")
    common(simulate)
    simulate.add_argument("--x0", type=parse_float_list, required=True)
    simulate.add_argument("--horizon", type=int, default=200)
    simulate.add_argument("--nonlinearity")
    simulate.add_argument("--gain", type=float)

    validate = sub.add_parser("validate", help="re-check a certificate")
    common(validate)
    validate.add_argument("--certificate", type=Path, required=True)
    validate.add_argument("--horizon", type=int, default=200)
    return parser


def config_from_args(argv: Sequence[str] | None = None) -> RunConfig:
    """解析命令行并校验为 RunConfig；未给出的选项取配置默认值。"""
    args = vars(build_parser().parse_args(argv))
    if "no_timing" in args:
        args["timing"] = not args.pop("no_timing")
    return RunConfig.model_validate({key: value for key, value in args.items() if value is not None})


def _executor(config: RunConfig) -> SolveExecutor:
    return SolveExecutor(options=config.solver_options())


def _summary(cert: Certificate) -> str:
    lines = [
        f"variant: {cert.variant}",
        f"gamma: {cert.gamma!r}",
        f"size: {cert.size!r}",
        f"mu: {cert.mu!r}",
        f"solver: {cert.solver.name} ({cert.solver.status})",
    ]
    if cert.solver.inaccurate:
        lines.append("warning: solver margins are not strictly signed")
    lines += [f"margin[{name}]: {value!r}" for name, value in sorted(cert.solver.margins.items())]
    return "\n".join(lines) + "\n"


async def run_certify(config: RunConfig) -> int:
    """证书命令：可行返回 0，不可行返回 2。"""
    problem = load_problem(config.problem)
    outcome = await certify_problem(
        problem,
        _executor(config),
        mu_grid=config.mu_grid,
        use_multiplier=config.variant != "sector",
        eps=config.eps,
    )
    writer = ResultWriter(config.out)
    if isinstance(outcome, Infeasible):
        await writer.write_json("infeasible.json", outcome.model_dump(mode="json"))
        logger.warning("Problem is infeasible: {}", outcome.raw_status)
        return EXIT_INFEASIBLE
    save_certificate(outcome, config.out / "certificate.json")
    summary = _summary(outcome)
    await writer.write_text("summary.txt", summary)
    logger.info("Certified: gamma={:.6g} size={:.6g}", outcome.gamma, outcome.size)
    return EXIT_OK


async def run_sweep(config: RunConfig) -> int:
    """扫描命令：写出 sweep.csv；求解出错的单元另写入 sweep_errors.json。"""
    template = load_problem(config.problem)
    manager = SweepManager(_executor(config), mu_grid=config.mu_grid, eps=config.eps)
    rows = await manager.run(template, config.grid_L or [], config.variants)
    writer = ResultWriter(config.out)
    path = await writer.write_csv("sweep.csv", CSV_HEADER, (row.csv_fields(timing=config.timing) for row in rows))
    errors = [{"L": row.L, "variant": row.variant, "error": row.error} for row in rows if row.error is not None]
    if errors:
        for entry in errors:
            logger.warning("Sweep cell L={} variant={} errored: {}", entry["L"], entry["variant"], entry["error"])
        await writer.write_json("sweep_errors.json", errors)
    logger.info("Sweep written to {} ({} rows, {} errors)", path, len(rows), len(errors))
    return EXIT_OK


def _simulation_nonlinearity(config: RunConfig, problem: AnalysisProblem) -> Callable[[FloatArray], FloatArray]:
    kind = config.nonlinearity or problem.nonlinearity
    gain = problem.band.L if config.gain is None else config.gain
    if kind in ("deadzone", "saturation"):
        if problem.sector is None:
            raise ValueError(f"{kind} simulation needs sector.l in the problem file")
        width = problem.sector.width
        if kind == "saturation":
            return lambda z: saturation_eval(z, width, gain)
        return lambda z: deadzone_eval(z, width, gain)
    if kind == "gradient":
        kind = "random-piecewise-linear"
    band = problem.band if config.gain is None else problem.with_gain(gain).band
    return make_profile(kind, band, problem.system.d, config.seed, mix=problem.system.d >= 2).gradient


async def run_simulate(config: RunConfig) -> int:
    """仿真命令：写出 trajectory.csv，列为 t, x…, z…, w…。"""
    problem = load_problem(config.problem)
    nonlin = _simulation_nonlinearity(config, problem)
    traj = simulate_loop(problem.system, nonlin, np.asarray(config.x0 or [], dtype=np.float64), config.horizon)
    n, d = traj.x.shape[1], traj.z.shape[1]
    header = ["t", *(f"x{i}" for i in range(n)), *(f"z{i}" for i in range(d)), *(f"w{i}" for i in range(d))]
    rows = (
        [str(t), *(repr(float(v)) for v in np.concatenate([traj.x[t], traj.z[t], traj.w[t]]))]
        for t in range(traj.horizon + 1)
    )
    path = await ResultWriter(config.out).write_csv("trajectory.csv", header, rows)
    logger.info("Trajectory written to {}", path)
    return EXIT_OK


async def run_validate(config: RunConfig) -> int:
    """验证命令：全部通过返回 0，否则返回 3。"""
    problem = load_problem(config.problem)
    cert = load_certificate(config.certificate or Path())
    report = verify_certificate(cert, problem, horizon=config.horizon, seed=config.seed)
    await ResultWriter(config.out).write_json("report.json", report.model_dump(mode="json"))
    for line in report.summary_lines():
        logger.info(line)
    if not report.passed:
        logger.error("Failing checks: {}", ", ".join(report.failing))
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "certify": run_certify,
    "sweep": run_sweep,
    "simulate": run_simulate,
    "validate": run_validate,
}


async def run(argv: Sequence[str] | None = None) -> int:
    """解析参数并执行子命令，返回退出码。"""
    try:
        config = config_from_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR
    except ValidationError as e:
        init_logger("ozfcertifier")
        logger.error("Invalid arguments:\n{}", e)
        return EXIT_ERROR
    init_logger("ozfcertifier", "DEBUG" if config.verbose else None)
    try:
        return await COMMANDS[config.command](config)
    except FingerprintMismatchError as e:
        logger.error("{}", e)
    except (ValueError, OSError, SolverFailureError, SimulationDivergedError) as e:
        logger.error("{} failed: {}", config.command, e)
    return EXIT_ERROR

