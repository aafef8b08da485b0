import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.sdp import (
    AffineInequalities,
    AffineMatrixMap,
    MatrixInequality,
    SdpProblem,
    VariableBlock,
    VariableLayout,
)


@pytest.fixture
def layout():
    return VariableLayout([
        VariableBlock(name="X", rows=3, cols=3, symmetric=True),
        VariableBlock(name="h", rows=1, cols=2),
    ])


def test_layout_sizes(layout):
    assert layout.size == 8
    assert "X" in layout
    assert "Y" not in layout
    assert layout.slice_of("h") == slice(6, 8)


def test_layout_pack_unpack(layout, rng):
    X = rng.normal(size=(3, 3))
    X = X + X.T
    values = {"X": X, "h": np.array([[1.0, 2.0]])}
    x = layout.pack(values)
    restored = layout.unpack(x)
    assert_allclose(restored["X"], X)
    assert_allclose(restored["h"], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        layout.unpack(np.zeros(3))


def test_layout_rejects_duplicates_and_non_square():
    with pytest.raises(ValueError):
        VariableLayout([VariableBlock(name="a", rows=1, cols=1), VariableBlock(name="a", rows=1, cols=1)])
    with pytest.raises(ValueError):
        VariableLayout([VariableBlock(name="a", rows=2, cols=3, symmetric=True)])


def test_affine_matrix_map_probing(layout, rng):
    K = rng.normal(size=(3, 3))

    def fn(values):
        return values["X"] @ K + K.T @ values["X"] + values["h"][0, 0] * np.eye(3) + np.ones((3, 3))

    mapping = AffineMatrixMap.from_function(fn, layout)
    x = rng.normal(size=layout.size)
    assert mapping.dim == 3
    assert_allclose(mapping.evaluate(x), fn(layout.unpack(x)), atol=1e-12)


def test_affine_inequalities(layout):
    def rows(values):
        return np.array([values["h"][0, 0] - 1.0, values["h"][0, 1]])

    system = AffineInequalities.from_function(rows, layout, ["a", "b"])
    x = layout.pack({"X": np.zeros((3, 3)), "h": [[3.0, -1.0]]})
    assert_allclose(system.evaluate(x), [2.0, -1.0])
    stacked = AffineInequalities.stack(system, AffineInequalities.empty(layout.size))
    assert len(stacked) == 2
    assert stacked.labels == ["a", "b"]


def test_matrix_inequality_margins(layout):
    identity = AffineMatrixMap.from_function(lambda values: values["X"], layout)
    psd = MatrixInequality("psd", identity, "psd", 1e-6)
    nsd = MatrixInequality("nsd", identity, "nsd", 1e-6)
    x = layout.pack({"X": np.diag([1.0, 2.0, 3.0]), "h": [[0.0, 0.0]]})
    assert psd.attained_margin(x) == pytest.approx(1.0)
    assert nsd.attained_margin(x) == pytest.approx(-3.0)


def test_sdp_problem_validation(layout):
    identity = AffineMatrixMap.from_function(lambda values: values["X"], layout)
    lmi = MatrixInequality("X", identity, "psd", 0.0)
    problem = SdpProblem(layout, [lmi], AffineInequalities.empty(layout.size), layout.unit_vector("h", 1))
    assert problem.num_variables == 8
    assert problem.block_sizes == [3]
    assert set(problem.margins(np.zeros(8))) == {"X"}
    with pytest.raises(ValueError):
        SdpProblem(layout, [lmi], AffineInequalities.empty(layout.size), np.zeros(3))
