import numpy as np
import orjson
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from src.core.certify import assemble_corollary5, interpret_result
from src.core.model import SlopeBand
from src.core.nonlin import FunctionFixture
from src.core.provider import SolveResult
from src.infra.repository import (
    load_certificate,
    load_fixture,
    load_problem,
    save_certificate,
    save_fixture,
    save_problem,
)


@pytest.fixture
def certificate(saturation_problem):
    program = assemble_corollary5(saturation_problem, 0.5)
    values = program.sdp.layout.zeros()
    values["calX"] = np.diag([1.0, 2.0, 3.0, 4.0])
    values["lambda"] = np.array([[-0.25, 1.0, -0.5]])
    values["E"] = np.array([[0.1]])
    values["H"] = np.array([[0.3, -0.2]])
    values["t"] = np.array([[7.0]])
    x = program.sdp.layout.pack(values)
    return interpret_result(program, SolveResult(status="optimal", x=x, raw_status="optimal", solver="mock"))


def test_problem_round_trip(saturation_problem, tmp_path):
    path = tmp_path / "nested" / "problem.json"
    save_problem(saturation_problem, path)
    restored = load_problem(path)
    assert restored.fingerprint() == saturation_problem.fingerprint()
    payload = orjson.loads(path.read_bytes())
    assert payload["sector"]["l"] == 0.1
    assert list(payload) == sorted(payload)


def test_problem_defaults_from_minimal_file(tmp_path):
    path = tmp_path / "problem.json"
    path.write_text('{"system": {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]]}, "band": {"m": 0, "L": 1}}')
    problem = load_problem(path)
    assert problem.rho == 1.0
    assert problem.multiplier.nu1 == 0
    assert_allclose(problem.system.D, [[0.0]])


def test_load_problem_reports_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"system": ')
    with pytest.raises(ValueError, match="invalid JSON"):
        load_problem(path)


def test_load_problem_rejects_bad_band(tmp_path):
    path = tmp_path / "problem.json"
    path.write_text('{"system": {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]]}, "band": {"m": 1, "L": 0.5}}')
    with pytest.raises(ValidationError, match="m < L"):
        load_problem(path)


def test_certificate_round_trip(certificate, tmp_path):
    path = tmp_path / "certificate.json"
    save_certificate(certificate, path)
    restored = load_certificate(path)
    assert_allclose(restored.calX, certificate.calX)
    assert_allclose(restored.lam, [-0.25, 1.0, -0.5])
    assert_allclose(restored.H, [[0.3, -0.2]])
    assert restored.gamma == certificate.gamma
    assert restored.problem_sha == certificate.problem_sha
    assert restored.solver.margins == certificate.solver.margins
    assert "lambda" in orjson.loads(path.read_bytes())


def test_certificate_rejects_wrong_dimensions(certificate, tmp_path):
    payload = certificate.model_dump(mode="json", by_alias=True)
    payload["calX"] = [[1.0]]
    path = tmp_path / "certificate.json"
    path.write_bytes(orjson.dumps(payload))
    with pytest.raises(ValidationError, match="calX"):
        load_certificate(path)


def test_fixture_round_trip(tmp_path):
    fixture = FunctionFixture.generate("saturating", SlopeBand(m=-0.2, L=0.8), 2, seed=5, mix=True)
    path = tmp_path / "fixture.json"
    save_fixture(fixture, path)
    restored = load_fixture(path)
    x = np.array([[0.5, -3.0], [2.0, 0.1]])
    assert_allclose(restored.function.gradient(x), fixture.function.gradient(x))
