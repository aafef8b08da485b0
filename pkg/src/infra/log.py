from __future__ import annotations

import sys

from loguru import logger

from src.config import settings

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "{extra[service]} | <cyan>{name}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)


def init_logger(service_name: str, level: str | None = None) -> None:
    """配置 loguru：单一 stderr 输出，每条记录携带服务名。

    Args:
        service_name: 服务名称。
        level: 日志级别，缺省取 settings.LOG_LEVEL。
    """
    logger.remove()
    logger.configure(extra={"service": service_name})
    logger.add(sys.stderr, level=(level or settings.LOG_LEVEL).upper(), format=LOG_FORMAT, enqueue=False)
