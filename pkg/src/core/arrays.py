from __future__ import annotations

from typing import Annotated, Any

import numpy as np
from numpy.typing import NDArray
from pydantic import PlainSerializer, PlainValidator

type FloatArray = NDArray[np.float64]


def frozen_array(value: Any, ndim: int | None = None) -> FloatArray:
    """将输入转换为只读的 float64 数组（总是复制）。

    Args:
        value: 嵌套列表或数组。
        ndim: 期望维数；为 2 时一维输入视为单行矩阵。

    Returns:
        FloatArray: 不可写的数组副本。
    """
    arr = np.array(value, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_matrix(value: Any) -> FloatArray:
    return frozen_array(value, ndim=2)


def _as_vector(value: Any) -> FloatArray:
    return frozen_array(value, ndim=1)


def _to_rows(arr: FloatArray) -> list[Any]:
    result: list[Any] = arr.tolist()
    return result


# pydantic 字段类型：以嵌套行列表读写的稠密矩阵 / 向量
Matrix = Annotated[FloatArray, PlainValidator(_as_matrix), PlainSerializer(_to_rows, return_type=list)]
Vector = Annotated[FloatArray, PlainValidator(_as_vector), PlainSerializer(_to_rows, return_type=list)]


def symmetrize(M: FloatArray) -> FloatArray:
    """返回 (M + Mᵀ)/2。"""
    result: FloatArray = 0.5 * (M + M.T)
    return result
