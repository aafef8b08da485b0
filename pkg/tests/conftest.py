import sys
from pathlib import Path
from unittest.mock import MagicMock

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.core.model import AnalysisProblem, LtiSystem, MultiplierShape, SectorCondition, SlopeBand  # noqa: E402
from src.core.provider import SolveResult, SolverBackend  # noqa: E402

REF_A = [[0.8, 0.5], [-0.4, 1.2]]
REF_B = [[-0.18], [1.0]]
REF_C = [[0.3, -1.8]]


@pytest.fixture
def reference_plant():
    return LtiSystem(A=REF_A, B=REF_B, C=REF_C)


@pytest.fixture
def saturation_problem(reference_plant):
    # saturated reference loop at L = 1
    return AnalysisProblem(
        system=reference_plant,
        band=SlopeBand(m=0.0, L=1.0),
        rho=1.0,
        alpha=0.0,
        beta=1.0,
        sector=SectorCondition(l=0.1),
        multiplier=MultiplierShape(nu1=1, nu2=1),
        nonlinearity="saturation",
    )


@pytest.fixture
def contractive_problem():
    # small-gain regime: stable plant and a tiny slope band
    return AnalysisProblem(
        system=LtiSystem(A=[[0.5, 0.1], [0.0, 0.4]], B=[[1.0], [0.5]], C=[[1.0, 0.0]]),
        band=SlopeBand(m=0.0, L=1e-4),
        rho=0.9,
        alpha=1.0,
        beta=0.0,
    )


@pytest.fixture
def gradient_problem():
    return AnalysisProblem(
        system=LtiSystem(A=[[0.6, 0.2], [-0.1, 0.5]], B=[[0.0], [1.0]], C=[[0.2, 0.1]]),
        band=SlopeBand(m=0.0, L=1.0),
        rho=0.95,
        alpha=1.0,
        beta=1.0,
        multiplier=MultiplierShape(nu1=1, nu2=1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mock_backend():
    backend = MagicMock(spec=SolverBackend)
    backend.solve.return_value = SolveResult(status="infeasible", raw_status="infeasible", solver="mock")
    return backend
