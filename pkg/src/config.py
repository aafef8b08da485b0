from __future__ import annotations

from pathlib import Path

import numpy as np
import orjson
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """应用配置类。

    从环境变量或 .env 文件加载配置。

    Attributes:
        SOLVER_BACKEND: 求解器后端注册名。
        SOLVER_NAME: 传递给后端的锥规划求解器名称。
        SOLVER_EPS: 严格 LMI 的相对裕度 ε。
        SOLVER_TIME_LIMIT: 单次求解的时间上限（秒），None 表示不限制。
        SOLVER_OPTIONS_FILE: 默认求解器选项 JSON 文件路径。
        MU_GRID_MIN_EXP: μ 对数网格的最小指数。
        MU_GRID_MAX_EXP: μ 对数网格的最大指数。
        MU_GRID_POINTS: μ 网格点数（包含 0）。
        DHD_TOL: d.h.d. 约束事后检查容差。
        CHECK_TOL: 采样检查的相对容差。
        SAMPLE_RADIUS: 默认采样半径。
        STRESS_RADIUS: 重尾压力测试的采样半径。
        WORKER_CONCURRENCY: 并发求解的最大数量。
        DEFAULT_SEED: 默认随机种子。
        LOG_LEVEL: 日志级别。
    """

    # Solver
    SOLVER_BACKEND: str = "cvxpy"
    SOLVER_NAME: str = "CLARABEL"
    SOLVER_EPS: float = 1e-7
    SOLVER_TIME_LIMIT: float | None = None
    SOLVER_OPTIONS_FILE: Path | None = None

    # μ line-search
    MU_GRID_MIN_EXP: float = -3.0
    MU_GRID_MAX_EXP: float = 3.0
    MU_GRID_POINTS: int = 25

    # Checks
    DHD_TOL: float = 1e-9
    CHECK_TOL: float = 1e-8
    SAMPLE_RADIUS: float = 10.0
    STRESS_RADIUS: float = 1e3

    # Worker Settings
    WORKER_CONCURRENCY: int = 4
    DEFAULT_SEED: int = 0

    # Logging
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")

    @property
    def mu_grid(self) -> list[float]:
        """获取默认 μ 网格：{0} ∪ 对数等距点。"""
        points = np.logspace(self.MU_GRID_MIN_EXP, self.MU_GRID_MAX_EXP, max(self.MU_GRID_POINTS - 1, 1))
        return [0.0, *(float(p) for p in points)]

    @property
    def solver_options(self) -> dict[str, object]:
        """获取默认求解器选项。

        若配置了 SOLVER_OPTIONS_FILE，则从该 JSON 文件读取。
        """
        if self.SOLVER_OPTIONS_FILE is None:
            return {}
        options = orjson.loads(self.SOLVER_OPTIONS_FILE.read_bytes())
        if not isinstance(options, dict):
            raise ValueError(f"Solver options file {self.SOLVER_OPTIONS_FILE} must contain a JSON object.")
        return options


settings = Settings()
