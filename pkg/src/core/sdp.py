from __future__ import annotations

from typing import TYPE_CHECKING, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.arrays import symmetrize

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    from numpy.typing import ArrayLike

    from src.core.arrays import FloatArray

    type Values = Mapping[str, FloatArray]


class VariableBlock(BaseModel):
    """一个矩阵形决策变量。对称块只存上三角元素。"""

    model_config = ConfigDict(frozen=True)

    name: str
    rows: int = Field(ge=0)
    cols: int = Field(ge=0)
    symmetric: bool = False

    @property
    def size(self) -> int:
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols


class VariableLayout:
    """决策向量 x 与具名矩阵变量之间的对应关系。"""

    def __init__(self, blocks: Sequence[VariableBlock]) -> None:
        self.blocks = tuple(blocks)
        self._offsets: dict[str, int] = {}
        offset = 0
        for block in self.blocks:
            if block.name in self._offsets:
                raise ValueError(f"Duplicate variable block {block.name}.")
            if block.symmetric and block.rows != block.cols:
                raise ValueError(f"Symmetric block {block.name} must be square.")
            self._offsets[block.name] = offset
            offset += block.size
        self.size = offset

    def __contains__(self, name: object) -> bool:
        return name in self._offsets

    def block(self, name: str) -> VariableBlock:
        for block in self.blocks:
            if block.name == name:
                return block
        raise KeyError(name)

    def slice_of(self, name: str) -> slice:
        start = self._offsets[name]
        return slice(start, start + self.block(name).size)

    def unpack(self, x: ArrayLike) -> dict[str, FloatArray]:
        """把决策向量展开为具名矩阵。"""
        vec = np.asarray(x, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"decision vector must have length {self.size}, got {vec.shape}")
        values: dict[str, FloatArray] = {}
        for block in self.blocks:
            chunk = vec[self.slice_of(block.name)]
            if block.symmetric:
                mat = np.zeros((block.rows, block.rows))
                mat[np.triu_indices(block.rows)] = chunk
                values[block.name] = mat + np.triu(mat, 1).T
            else:
                values[block.name] = chunk.reshape(block.rows, block.cols)
        return values

    def pack(self, values: Mapping[str, ArrayLike]) -> FloatArray:
        """unpack 的逆映射；对称块先对称化。"""
        vec = np.zeros(self.size)
        for block in self.blocks:
            mat = np.asarray(values[block.name], dtype=np.float64).reshape(block.rows, block.cols)
            if block.symmetric:
                vec[self.slice_of(block.name)] = symmetrize(mat)[np.triu_indices(block.rows)]
            else:
                vec[self.slice_of(block.name)] = mat.ravel()
        return vec

    def zeros(self) -> dict[str, FloatArray]:
        return self.unpack(np.zeros(self.size))

    def basis(self, index: int) -> dict[str, FloatArray]:
        unit = np.zeros(self.size)
        unit[index] = 1.0
        return self.unpack(unit)

    def unit_vector(self, name: str, position: int = 0) -> FloatArray:
        """块 name 中第 position 个存储元素对应的单位向量。"""
        unit = np.zeros(self.size)
        unit[self.slice_of(name).start + position] = 1.0
        return unit


class AffineMatrixMap:
    """对称矩阵值仿射映射 M(x) = M₀ + Σᵢ xᵢMᵢ。"""

    def __init__(self, constant: FloatArray, coefficients: FloatArray) -> None:
        k = constant.shape[0]
        if constant.shape != (k, k) or coefficients.shape[1:] != (k, k):
            raise ValueError("affine map blocks must be square and of equal size")
        self.constant = constant
        self.coefficients = coefficients

    @classmethod
    def from_function(cls, fn: Callable[[Values], FloatArray], layout: VariableLayout) -> AffineMatrixMap:
        """对仿射函数 fn 逐个探测单位向量，得到常数项与系数。"""
        constant = symmetrize(np.asarray(fn(layout.zeros()), dtype=np.float64))
        coefficients = np.empty((layout.size, *constant.shape))
        for i in range(layout.size):
            coefficients[i] = symmetrize(np.asarray(fn(layout.basis(i)), dtype=np.float64)) - constant
        return cls(constant, coefficients)

    @property
    def dim(self) -> int:
        return int(self.constant.shape[0])

    def evaluate(self, x: ArrayLike) -> FloatArray:
        result: FloatArray = self.constant + np.tensordot(np.asarray(x, dtype=np.float64), self.coefficients, axes=1)
        return result


class AffineInequalities:
    """逐元素仿射不等式 Gx + g ≥ 0，每行带标签。"""

    def __init__(self, G: FloatArray, g: FloatArray, labels: Sequence[str]) -> None:
        if G.ndim != 2 or g.shape != (G.shape[0],) or len(labels) != G.shape[0]:
            raise ValueError("inconsistent affine inequality system")
        self.G = G
        self.g = g
        self.labels = list(labels)

    @classmethod
    def from_function(
        cls, fn: Callable[[Values], FloatArray], layout: VariableLayout, labels: Sequence[str]
    ) -> AffineInequalities:
        constant = np.asarray(fn(layout.zeros()), dtype=np.float64)
        G = np.empty((constant.shape[0], layout.size))
        for i in range(layout.size):
            G[:, i] = np.asarray(fn(layout.basis(i)), dtype=np.float64) - constant
        return cls(G, constant, labels)

    @classmethod
    def empty(cls, size: int) -> AffineInequalities:
        return cls(np.zeros((0, size)), np.zeros(0), [])

    @classmethod
    def stack(cls, *parts: AffineInequalities) -> AffineInequalities:
        return cls(
            np.vstack([p.G for p in parts]),
            np.concatenate([p.g for p in parts]),
            [label for p in parts for label in p.labels],
        )

    def __len__(self) -> int:
        return len(self.labels)

    def evaluate(self, x: ArrayLike) -> FloatArray:
        result: FloatArray = self.G @ np.asarray(x, dtype=np.float64) + self.g
        return result


class MatrixInequality:
    """M(x) ⪰ margin·I（psd）或 M(x) ⪯ -margin·I（nsd）。"""

    def __init__(self, name: str, mapping: AffineMatrixMap, sense: Literal["psd", "nsd"], margin: float) -> None:
        self.name = name
        self.mapping = mapping
        self.sense = sense
        self.margin = margin

    def attained_margin(self, x: ArrayLike) -> float:
        """实际达到的裕度：psd 为 λ_min，nsd 为 -λ_max。"""
        eigs = np.linalg.eigvalsh(self.mapping.evaluate(x))
        if self.sense == "psd":
            return float(eigs[0])
        return float(-eigs[-1])


class SdpProblem:
    """线性目标、仿射 LMI 与仿射标量不等式组成的半定规划。"""

    def __init__(
        self,
        layout: VariableLayout,
        lmis: Sequence[MatrixInequality],
        inequalities: AffineInequalities,
        objective: FloatArray,
    ) -> None:
        if objective.shape != (layout.size,) or inequalities.G.shape[1] != layout.size:
            raise ValueError("objective and inequalities must match the variable layout")
        self.layout = layout
        self.lmis = list(lmis)
        self.inequalities = inequalities
        self.objective = objective

    @property
    def num_variables(self) -> int:
        return self.layout.size

    @property
    def block_sizes(self) -> list[int]:
        return [lmi.mapping.dim for lmi in self.lmis]

    def margins(self, x: ArrayLike) -> dict[str, float]:
        """各 LMI 的实际裕度以及标量不等式的最小松弛。"""
        result = {lmi.name: lmi.attained_margin(x) for lmi in self.lmis}
        if len(self.inequalities):
            result["linear"] = float(np.min(self.inequalities.evaluate(x)))
        return result
