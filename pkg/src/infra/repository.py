from __future__ import annotations

from typing import TYPE_CHECKING

import orjson
from loguru import logger

from src.core.certify import Certificate
from src.core.model import AnalysisProblem
from src.core.nonlin import FunctionFixture

if TYPE_CHECKING:
    from pathlib import Path

    from pydantic import BaseModel

DUMP_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS


def _read_json(path: Path) -> object:
    try:
        return orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON at position {e.pos}: {e.msg}") from e


def _write_model(model: BaseModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(model.model_dump(mode="json", by_alias=True), option=DUMP_OPTIONS))


def load_problem(path: Path) -> AnalysisProblem:
    """读取问题文件。

    Raises:
        ValueError: JSON 语法错误或字段校验失败（pydantic 的错误信息带字段位置）。
    """
    problem = AnalysisProblem.model_validate(_read_json(path))
    logger.debug("Loaded problem {} ({})", path, problem.fingerprint()[:12])
    return problem


def save_problem(problem: AnalysisProblem, path: Path) -> None:
    _write_model(problem, path)


def load_certificate(path: Path) -> Certificate:
    return Certificate.model_validate(_read_json(path))


def save_certificate(cert: Certificate, path: Path) -> None:
    """写出证书。浮点数使用最短可精确往返的十进制表示。"""
    _write_model(cert, path)
    logger.info("Certificate written to {}", path)


def load_fixture(path: Path) -> FunctionFixture:
    return FunctionFixture.model_validate(_read_json(path))


def save_fixture(fixture: FunctionFixture, path: Path) -> None:
    _write_model(fixture, path)
