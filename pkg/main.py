from __future__ import annotations

import asyncio
import sys

from src.cli import run


def main() -> int:
    """命令行入口：certify / sweep / simulate / validate。"""
    try:
        return asyncio.run(run(sys.argv[1:]))
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
