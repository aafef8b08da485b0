from __future__ import annotations

import asyncio
import csv
from typing import TYPE_CHECKING

import orjson

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path


class ResultWriter:
    """结果文件写入器。

    所有写操作经同一把锁串行化，并发任务可以共享一个实例。
    """

    def __init__(self, out_dir: Path) -> None:
        self._out_dir = out_dir
        self._lock = asyncio.Lock()

    @property
    def out_dir(self) -> Path:
        return self._out_dir

    def _path(self, name: str) -> Path:
        self._out_dir.mkdir(parents=True, exist_ok=True)
        return self._out_dir / name

    async def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
        """写出 CSV，行尾固定为 \\n。"""
        path = self._path(name)
        async with self._lock:
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        return path

    async def write_json(self, name: str, payload: object) -> Path:
        path = self._path(name)
        async with self._lock:
            path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
        return path

    async def write_text(self, name: str, text: str) -> Path:
        path = self._path(name)
        async with self._lock:
            path.write_text(text, encoding="utf-8")
        return path
