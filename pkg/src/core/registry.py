from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Callable

    import numpy as np

    from src.core.profiles import ScalarProfile
    from src.core.provider import SolverBackend

    type ProfileFactory = Callable[[np.random.Generator], ScalarProfile]


class Registry[T]:
    """按名称注册的组件表。

    用于管理可按名称选择的内置组件（标量轮廓生成器、求解器后端）。
    """

    def __init__(self, kind: str) -> None:
        self._kind = kind
        self._items: dict[str, T] = {}

    def register(self, name: str | None = None) -> Callable[[T], T]:
        """注册一个组件。

        Args:
            name: 组件名称，默认使用其 __name__。
        """

        def decorator(item: T) -> T:
            item_name = name or getattr(item, "__name__", None)
            if not item_name:
                raise ValueError(f"Cannot infer a name for {self._kind} {item!r}.")
            if item_name in self._items:
                raise ValueError(f"{self._kind.capitalize()} {item_name} already registered.")
            self._items[item_name] = item
            return item

        return decorator

    def get(self, name: str) -> T | None:
        """获取已注册的组件。"""
        return self._items.get(name)

    def require(self, name: str) -> T:
        """获取已注册的组件，不存在时抛出 ValueError。"""
        item = self._items.get(name)
        if item is None:
            known = ", ".join(sorted(self._items)) or "none"
            raise ValueError(f"Unknown {self._kind} {name!r} (known: {known}).")
        return item

    def names(self) -> list[str]:
        return sorted(self._items)

    def unregister(self, name: str) -> None:
        self._items.pop(name, None)

    def clear(self) -> None:
        """清空注册表。"""
        self._items.clear()


profile_kinds: Registry[ProfileFactory] = Registry("profile kind")
solver_backends: Registry[type[SolverBackend]] = Registry("solver backend")
