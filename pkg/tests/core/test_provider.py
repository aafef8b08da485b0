from unittest.mock import patch

import cvxpy as cp
import numpy as np
import pytest

from src.core.provider import CvxpyBackend, SolveResult, SolverBackend, SolverOptions, get_backend
from src.core.registry import solver_backends
from src.core.sdp import AffineInequalities, AffineMatrixMap, MatrixInequality, SdpProblem, VariableBlock, VariableLayout


@pytest.fixture
def clean_registry():
    original = solver_backends._items.copy()
    yield
    solver_backends._items = original


def _epigraph_problem():
    # minimize t subject to [[t, 1], [1, 1]] >= 0, i.e. t >= 1
    layout = VariableLayout([VariableBlock(name="t", rows=1, cols=1)])
    mapping = AffineMatrixMap.from_function(lambda v: np.array([[v["t"][0, 0], 1.0], [1.0, 1.0]]), layout)
    return SdpProblem(
        layout,
        [MatrixInequality("schur", mapping, "psd", 0.0)],
        AffineInequalities.empty(layout.size),
        layout.unit_vector("t"),
    )


def _infeasible_problem():
    layout = VariableLayout([VariableBlock(name="X", rows=2, cols=2, symmetric=True)])
    mapping = AffineMatrixMap.from_function(lambda v: v["X"], layout)
    return SdpProblem(
        layout,
        [MatrixInequality("pos", mapping, "psd", 1.0), MatrixInequality("neg", mapping, "nsd", 1.0)],
        AffineInequalities.empty(layout.size),
        np.zeros(layout.size),
    )


def test_get_backend_default():
    assert isinstance(get_backend(), CvxpyBackend)
    with pytest.raises(ValueError, match="Unknown solver backend"):
        get_backend("nope")


def test_register_custom_backend(clean_registry):
    @solver_backends.register("fixed")
    class FixedBackend(SolverBackend):
        def solve(self, problem, options):
            return SolveResult(status="optimal", x=np.ones(problem.num_variables), raw_status="ok", solver="fixed")

    result = get_backend("fixed").solve(_epigraph_problem(), SolverOptions())
    assert result.status == "optimal"
    assert result.x.tolist() == [1.0]


def test_cvxpy_backend_solves_epigraph():
    result = CvxpyBackend().solve(_epigraph_problem(), SolverOptions())
    assert result.status == "optimal"
    assert result.x[0] == pytest.approx(1.0, abs=1e-5)
    assert result.solver == "CLARABEL"


def test_cvxpy_backend_reports_infeasible():
    result = CvxpyBackend().solve(_infeasible_problem(), SolverOptions())
    assert result.status == "infeasible"
    assert result.x is None


def test_cvxpy_backend_solver_error_is_failure():
    with patch.object(cp.Problem, "solve", side_effect=cp.SolverError("breakdown")):
        result = CvxpyBackend().solve(_epigraph_problem(), SolverOptions())
    assert result.status == "failed"
    assert "breakdown" in result.raw_status


def test_solver_options_defaults():
    options = SolverOptions()
    assert options.backend == "cvxpy"
    assert options.eps > 0
    with pytest.raises(ValueError):
        SolverOptions(eps=0.0)
