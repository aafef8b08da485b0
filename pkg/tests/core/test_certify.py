from unittest.mock import MagicMock, patch

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.certify import (
    Certificate,
    FingerprintMismatchError,
    Infeasible,
    LineSearchFailedError,
    SolverFailureError,
    assemble_corollary5,
    assemble_theorem4,
    build_interconnection,
    certify_problem,
    interpret_result,
    mu_linesearch,
    solve,
    verify_certificate,
)
from src.core.model import AnalysisProblem, LtiSystem, MultiplierShape, SlopeBand, simulate_loop
from src.core.multiplier import FirMultiplier, filter_realization, running_cost_P, terminal_cost_Z
from src.core.nonlin import make_profile
from src.core.provider import SolveResult, SolverOptions
from src.worker.executor import SolveExecutor

FAST_GRID = [0.0, 0.1, 1.0, 10.0]


def _random_values(program, rng):
    values = {}
    for block in program.sdp.layout.blocks:
        mat = rng.normal(size=(block.rows, block.cols))
        values[block.name] = mat + mat.T if block.symmetric else mat
    return values


def _optimal(program, values):
    return SolveResult(status="optimal", x=program.sdp.layout.pack(values), raw_status="optimal", solver="mock")


def _feasible_looking_values(program, scale=1.0):
    layout = program.sdp.layout
    values = layout.zeros()
    values["calX"] = scale * np.eye(layout.block("calX").rows)
    if "lambda" in layout:
        lam = np.zeros(layout.block("lambda").cols)
        lam[program.interconnection.shape.nu1] = 1.0
        values["lambda"] = lam.reshape(1, -1)
    values["t"] = np.array([[scale * program.interconnection.n]])
    return values


def _mock_executor(statuses):
    """Executor whose results follow ``statuses`` per grid point; optimal points get gamma growing with index."""
    executor = MagicMock()

    async def run_all(problems):
        results = []
        for i, (sdp, status) in enumerate(zip(problems, statuses, strict=True)):
            if status == "optimal":
                values = sdp.layout.zeros()
                values["calX"] = (abs(status_scale[i]) + 1.0) * np.eye(sdp.layout.block("calX").rows)
                x = sdp.layout.pack(values)
                results.append(SolveResult(status="optimal", x=x, raw_status="optimal", solver="mock"))
            else:
                results.append(SolveResult(status=status, raw_status=status, solver="mock"))
        return results

    status_scale = list(range(len(statuses)))
    executor.run_all = run_all
    return executor


def test_build_interconnection_blocks(reference_plant):
    problem = AnalysisProblem(
        system=reference_plant, band=SlopeBand(m=0.0, L=1.0), rho=0.9, multiplier=MultiplierShape(nu1=1, nu2=1)
    )
    icm = build_interconnection(problem)
    assert icm.calA.shape == (4, 4)
    assert icm.n_psi == 2
    assert_allclose(icm.calA[2:, 2:], reference_plant.A / 0.9)
    assert_allclose(icm.calA[2:, :2], 0.0)
    assert_allclose(icm.calCp, [[0.0, 0.0, 0.3, -1.8]])
    assert icm.calB.shape == (4, 1)


def test_build_interconnection_without_filter(reference_plant):
    problem = AnalysisProblem(system=reference_plant, band=SlopeBand(m=0.0, L=1.0), rho=0.8)
    icm = build_interconnection(problem)
    assert icm.n_psi == 0
    assert_allclose(icm.calA, reference_plant.A / 0.8)
    assert_allclose(icm.calB, reference_plant.B / 0.8)


def test_build_interconnection_uses_transformed_plant(saturation_problem):
    icm = build_interconnection(saturation_problem)
    assert_allclose(icm.calA[2:, 2:], [[0.746, 0.824], [-0.1, -0.6]], atol=1e-12)


def test_interconnection_matches_two_path_simulation(reference_plant, rng):
    rho = 0.9
    band = SlopeBand(m=-0.5, L=1.5)
    problem = AnalysisProblem(system=reference_plant, band=band, rho=rho, multiplier=MultiplierShape(nu1=2, nu2=1))
    mult = FirMultiplier(nu1=2, nu2=1, lam=rng.normal(size=4), E=rng.normal(size=(1, 2)))
    icm = build_interconnection(problem)
    calC, calD = icm.output_matrices(mult)

    steps = 30
    wbar = rng.normal(size=(steps, 1))
    xbar = np.zeros((steps + 1, 2))
    xbar[0] = rng.normal(size=2)
    for t in range(steps):
        xbar[t + 1] = (reference_plant.A @ xbar[t] + reference_plant.B @ wbar[t]) / rho
    zbar = xbar[:steps] @ reference_plant.C.T
    outputs, states = filter_realization(mult, band, 1).simulate(np.hstack([zbar, wbar]))

    eta = np.concatenate([np.zeros(icm.n_psi), xbar[0]])
    for t in range(steps):
        assert_allclose(calC @ eta + calD @ wbar[t], outputs[t], atol=1e-10)
        eta = icm.calA @ eta + icm.calB @ wbar[t]
        assert_allclose(eta, np.concatenate([states[t + 1], xbar[t + 1]]), atol=1e-10)


def test_theorem4_variable_count(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    assert program.sdp.num_variables == 15
    assert program.sdp.block_sizes == [5, 4]
    assert program.variant == "theorem4"
    # d.h.d. rows plus the epigraph row
    assert program.sdp.inequalities.labels[-1].startswith("epigraph")


def test_theorem4_dissipation_block_quadratic_form(gradient_problem, rng):
    program = assemble_theorem4(gradient_problem)
    icm = program.interconnection
    P = running_cost_P(1)
    for _ in range(5):
        values = _random_values(program, rng)
        x = program.sdp.layout.pack(values)
        M = program.lmi("dissipation").mapping.evaluate(x)
        X = program.sdp.layout.unpack(x)["calX"]
        mult = FirMultiplier(nu1=1, nu2=1, lam=values["lambda"].ravel(), E=values["E"])
        calC, calD = icm.output_matrices(mult)

        eta = rng.normal(size=icm.size)
        w = rng.normal(size=1)
        nxt = icm.calA @ eta + icm.calB @ w
        v = calC @ eta + calD @ w
        z = icm.calCp @ eta
        expected = nxt @ X @ nxt - eta @ X @ eta + v @ P @ v + gradient_problem.alpha * float(z @ z)
        zeta = np.concatenate([eta, w])
        assert float(zeta @ M @ zeta) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_theorem4_terminal_block_without_performance(reference_plant, rng):
    problem = AnalysisProblem(
        system=reference_plant, band=SlopeBand(m=0.0, L=0.5), multiplier=MultiplierShape(nu1=1, nu2=1)
    )
    program = assemble_theorem4(problem)
    values = _random_values(program, rng)
    x = program.sdp.layout.pack(values)
    block = program.lmi("terminal").mapping.evaluate(x)
    unpacked = program.sdp.layout.unpack(x)
    storage = unpacked["calX"].copy()
    storage[:2, :2] += terminal_cost_Z(unpacked["E"], 1)
    assert_allclose(block, storage, atol=1e-12)


def test_sector_only_variant_has_no_multiplier(gradient_problem):
    program = assemble_theorem4(gradient_problem, use_multiplier=False)
    assert "lambda" not in program.sdp.layout
    assert program.interconnection.n_psi == 0
    assert program.sdp.block_sizes == [3, 2]


def test_corollary5_structure(saturation_problem):
    program = assemble_corollary5(saturation_problem, 1.0)
    assert "H" in program.sdp.layout
    assert program.variant == "corollary5"
    assert program.sdp.block_sizes == [5, 4, 5]


def test_corollary5_mu_zero_matches_theorem4(saturation_problem, rng):
    sector = assemble_corollary5(saturation_problem, 0.0)
    plain = assemble_theorem4(saturation_problem)
    values = _random_values(sector, rng)
    x_sector = sector.sdp.layout.pack(values)
    x_plain = plain.sdp.layout.pack({k: v for k, v in values.items() if k != "H"})
    assert_allclose(
        sector.lmi("dissipation").mapping.evaluate(x_sector),
        plain.lmi("dissipation").mapping.evaluate(x_plain),
        atol=1e-12,
    )


def test_corollary5_sector_term(saturation_problem, rng):
    mu = 2.0
    with_sector = assemble_corollary5(saturation_problem, mu)
    without = assemble_corollary5(saturation_problem, 0.0)
    values = _random_values(with_sector, rng)
    x = with_sector.sdp.layout.pack(values)
    diff = with_sector.lmi("dissipation").mapping.evaluate(x) - without.lmi("dissipation").mapping.evaluate(x)
    eta = rng.normal(size=4)
    w = rng.normal()
    C = saturation_problem.system.C.ravel()
    gap = float((C - values["H"].ravel()) @ eta[2:])
    # mu * [gap, w] P_L [gap, w]^T with P_L = [[0, L], [L, -2]] and L = 1
    expected = mu * (2.0 * gap * w - 2.0 * w * w)
    zeta = np.concatenate([eta, [w]])
    assert float(zeta @ diff @ zeta) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_sector_quadratic_form_value():
    P_L = np.array([[0.0, 1.0], [1.0, -2.0]])
    vec = np.array([0.25, 0.2])
    assert float(vec @ P_L @ vec) == pytest.approx(0.02)


def test_corollary5_amplitude_block_schur_equivalence(saturation_problem, rng):
    program = assemble_corollary5(saturation_problem, 1.0)
    layout = program.sdp.layout
    width = 0.1
    checked = 0
    for _ in range(40):
        values = _random_values(program, rng)
        Q = rng.normal(size=(4, 4))
        values["calX"] = Q @ Q.T + np.eye(4)
        values["E"] = 0.1 * rng.normal(size=(1, 1))
        values["H"] = rng.normal(size=(1, 2)) * 10.0 ** rng.uniform(-2, 1)
        x = layout.pack(values)
        block = program.lmi("amplitude").mapping.evaluate(x)
        storage = values["calX"].copy()
        storage[:2, :2] += terminal_cost_Z(values["E"], 1)
        row = np.concatenate([np.zeros(2), values["H"].ravel()])
        schur = np.linalg.eigvalsh(width**2 * storage - np.outer(row, row))[0]
        if abs(schur) < 1e-8:
            continue
        checked += 1
        assert (np.linalg.eigvalsh(block)[0] >= 0) == (schur >= 0)
    assert checked > 30


def test_corollary5_rejections(saturation_problem, gradient_problem):
    with pytest.raises(ValueError):
        assemble_corollary5(saturation_problem, -1.0)
    with pytest.raises(ValueError):
        assemble_corollary5(gradient_problem, 1.0)
    disabled = saturation_problem.model_copy(update={"sector": saturation_problem.sector.model_copy(update={"enabled": False})})
    with pytest.raises(ValueError):
        assemble_corollary5(disabled, 1.0)


def test_interpret_result_statuses(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    infeasible = interpret_result(program, SolveResult(status="infeasible", raw_status="infeasible", solver="mock"))
    assert isinstance(infeasible, Infeasible)
    assert infeasible.problem_sha == gradient_problem.fingerprint()
    with pytest.raises(SolverFailureError):
        interpret_result(program, SolveResult(status="failed", raw_status="numerical", solver="mock"))


def test_solve_uses_configured_backend(gradient_problem, mock_backend):
    program = assemble_theorem4(gradient_problem)
    options = SolverOptions()
    with patch("src.core.certify.get_backend", return_value=mock_backend) as factory:
        outcome = solve(program, options)
    factory.assert_called_once_with(options.backend)
    mock_backend.solve.assert_called_once_with(program.sdp, options)
    assert isinstance(outcome, Infeasible)


def test_interpret_result_builds_certificate(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    values = _feasible_looking_values(program, scale=2.0)
    cert = interpret_result(program, _optimal(program, values))
    assert isinstance(cert, Certificate)
    assert cert.gamma == pytest.approx(2.0)
    assert cert.size == pytest.approx(0.5)
    assert_allclose(cert.X, 2.0 * np.eye(2))
    assert cert.dimensions == {"n": 2, "n_psi": 2, "d": 1}
    assert set(cert.solver.margins) == {"dissipation", "terminal", "linear"}
    assert np.trace(cert.X) <= cert.gamma**2 + 1e-12


def test_certificate_json_round_trip(gradient_problem):
    program = assemble_theorem4(gradient_problem, use_multiplier=False)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    payload = cert.model_dump(mode="json", by_alias=True)
    assert {"calX", "lambda", "E", "mu", "H", "gamma", "rho", "alpha", "beta", "band", "shape", "problem_sha"} <= set(
        payload
    )
    restored = Certificate.model_validate(payload)
    assert_allclose(restored.calX, cert.calX)
    assert restored.E.shape == (0, 0)
    assert restored.gamma == cert.gamma


def test_certificate_decay_constants(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    margins = {"dissipation": 0.5, "terminal": 0.25, "linear": 0.0}
    cert = cert.model_copy(update={"solver": cert.solver.model_copy(update={"margins": margins})})
    # X = I
    assert cert.stability_constant() == pytest.approx(np.sqrt(2.0))
    assert cert.decay_bound([3.0, 4.0]) == pytest.approx(np.sqrt(25.0 / 0.5))
    bad = cert.model_copy(update={"solver": cert.solver.model_copy(update={"margins": {"dissipation": -1.0}})})
    with pytest.raises(ValueError):
        bad.stability_constant()


def test_verify_rejects_foreign_problem(gradient_problem, contractive_problem):
    program = assemble_theorem4(gradient_problem)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    with pytest.raises(FingerprintMismatchError):
        verify_certificate(cert, contractive_problem)


def test_interpret_result_flags_unsigned_margins(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    values = _feasible_looking_values(program)
    values["calX"] = -np.eye(4)
    cert = interpret_result(program, _optimal(program, values))
    assert cert.solver.inaccurate
    assert cert.solver.margins["terminal"] < 0

    signed = {"dissipation": 1.0, "terminal": 1.0, "linear": 0.0}
    with patch.object(program.sdp, "margins", return_value=signed):
        clean = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    assert not clean.solver.inaccurate


def _verify_quick(cert, problem):
    return verify_certificate(cert, problem, horizon=10, n_functions=2, initial_states=[[0.0, 0.0]])


def test_verify_rejects_mismatched_parameters(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    checks = {check.name: check for check in _verify_quick(cert, gradient_problem).checks}
    assert checks["parameters"].passed

    report = _verify_quick(cert.model_copy(update={"rho": 0.5}), gradient_problem)
    assert "parameters" in report.failing
    checks = {check.name: check for check in report.checks}
    assert checks["parameters"].details["mismatched"] == "rho"

    report = _verify_quick(cert.model_copy(update={"alpha": 0.0, "band": SlopeBand(m=0.0, L=0.5)}), gradient_problem)
    checks = {check.name: check for check in report.checks}
    assert checks["parameters"].details["mismatched"] == "alpha,L"


def test_verify_recomputes_margins(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    inflated = cert.model_copy(
        update={"solver": cert.solver.model_copy(update={"margins": {"dissipation": 1e6, "terminal": 1e6}})}
    )
    for candidate in (cert, inflated):
        checks = {check.name: check for check in _verify_quick(candidate, gradient_problem).checks}
        for name in ("dissipation", "terminal"):
            assert checks[f"lmi:{name}"].details["margin"] == pytest.approx(cert.solver.margins[name])


def test_verify_requires_strictly_positive_lmi_margins(gradient_problem):
    program = assemble_theorem4(gradient_problem)
    cert = interpret_result(program, _optimal(program, _feasible_looking_values(program)))
    assert cert.eps > 0

    zero = {"dissipation": 0.0, "terminal": 0.0, "linear": 0.0}
    with patch("src.core.sdp.SdpProblem.margins", return_value=zero):
        report = _verify_quick(cert, gradient_problem)
    checks = {check.name: check for check in report.checks}
    assert {"lmi:dissipation", "lmi:terminal"} <= set(report.failing)
    assert checks["lmi:terminal"].details["floor"] == pytest.approx(0.5 * cert.eps)
    assert checks["lmi:terminal"].worst_violation == pytest.approx(0.5 * cert.eps)

    strict = {"dissipation": cert.eps, "terminal": cert.eps, "linear": 0.0}
    with patch("src.core.sdp.SdpProblem.margins", return_value=strict):
        report = _verify_quick(cert, gradient_problem)
    assert not any(name.startswith("lmi:") for name in report.failing)


@pytest.mark.asyncio
async def test_mu_linesearch_picks_smallest_gamma(saturation_problem):
    executor = _mock_executor(["infeasible", "optimal", "optimal", "failed"])
    result = await mu_linesearch(saturation_problem, [10.0, 1.0, 0.1, 0.0], executor)
    # grid is sorted: 0 infeasible, 0.1 optimal (scale 2), 1 optimal (scale 3), 10 failed
    assert result.best.mu == pytest.approx(0.1)
    assert [point.status for point in result.profile] == ["infeasible", "optimal", "optimal", "failed"]
    assert result.profile[1].gamma < result.profile[2].gamma


@pytest.mark.asyncio
async def test_mu_linesearch_duplicates_are_idempotent(saturation_problem):
    first = await mu_linesearch(saturation_problem, [0.0, 1.0], _mock_executor(["optimal", "optimal"]))
    second = await mu_linesearch(saturation_problem, [1.0, 0.0, 1.0, 0.0], _mock_executor(["optimal", "optimal"]))
    assert first.best.gamma == second.best.gamma
    assert [p.mu for p in first.profile] == [p.mu for p in second.profile]


@pytest.mark.asyncio
async def test_mu_linesearch_all_infeasible(saturation_problem):
    with pytest.raises(LineSearchFailedError) as excinfo:
        await mu_linesearch(saturation_problem, [0.0, 1.0], _mock_executor(["infeasible", "failed"]))
    assert [p.status for p in excinfo.value.points] == ["infeasible", "failed"]


@pytest.mark.asyncio
async def test_mu_linesearch_rejects_bad_grid(saturation_problem):
    with pytest.raises(ValueError):
        await mu_linesearch(saturation_problem, [], _mock_executor([]))
    with pytest.raises(ValueError):
        await mu_linesearch(saturation_problem, [-1.0], _mock_executor(["optimal"]))


@pytest.mark.asyncio
async def test_certify_problem_maps_line_search_failures(saturation_problem):
    outcome = await certify_problem(saturation_problem, _mock_executor(["infeasible", "failed"]), mu_grid=[0.0, 1.0])
    assert isinstance(outcome, Infeasible)
    with pytest.raises(SolverFailureError):
        await certify_problem(saturation_problem, _mock_executor(["failed", "failed"]), mu_grid=[0.0, 1.0])


@pytest.mark.slow
@pytest.mark.asyncio
async def test_small_gain_problem_is_certified(contractive_problem):
    executor = SolveExecutor(options=SolverOptions())
    cert = await certify_problem(contractive_problem, executor)
    assert isinstance(cert, Certificate)
    assert cert.solver.margins["dissipation"] > 0
    report = verify_certificate(cert, contractive_problem, n_initial=20, horizon=100, n_functions=6)
    assert report.passed, report.summary_lines()


@pytest.mark.slow
@pytest.mark.asyncio
async def test_unstable_problem_is_infeasible():
    problem = AnalysisProblem(
        system=LtiSystem(A=[[1.1]], B=[[1.0]], C=[[1.0]]),
        band=SlopeBand(m=0.0, L=0.01),
        multiplier=MultiplierShape(nu1=1, nu2=1),
    )
    outcome = await certify_problem(problem, SolveExecutor(options=SolverOptions()))
    assert isinstance(outcome, Infeasible)


@pytest.mark.slow
@pytest.mark.asyncio
async def test_saturated_example_certificate_verifies(saturation_problem):
    executor = SolveExecutor(options=SolverOptions())
    search = await mu_linesearch(saturation_problem, FAST_GRID, executor)
    cert = search.best
    assert cert.gamma > 0
    assert np.trace(cert.X) <= cert.gamma**2 * (1 + 1e-9)

    report = verify_certificate(cert, saturation_problem, n_initial=50, horizon=150)
    assert report.passed, report.summary_lines()

    tampered_X = np.array(cert.calX)
    tampered_X[-1, -1] = -1.0
    tampered = cert.model_copy(update={"calX": tampered_X})
    tampered_report = verify_certificate(tampered, saturation_problem, n_initial=10, horizon=20)
    assert not tampered_report.passed
    assert any(name.startswith("lmi:") for name in tampered_report.failing)
    assert "closed_loop" in tampered_report.failing


@pytest.mark.slow
@pytest.mark.asyncio
async def test_longer_multipliers_do_not_hurt(saturation_problem):
    executor = SolveExecutor(options=SolverOptions())
    short = await mu_linesearch(saturation_problem.with_multiplier(0, 0), FAST_GRID, executor)
    long = await mu_linesearch(saturation_problem, FAST_GRID, executor)
    assert long.best.gamma <= short.best.gamma * (1 + 1e-4)


@pytest.mark.slow
@pytest.mark.asyncio
async def test_contractive_certificate_bounds_trajectories():
    rho = 0.95
    problem = AnalysisProblem(
        system=LtiSystem(A=[[0.5, 0.1], [0.0, 0.4]], B=[[1.0], [0.5]], C=[[1.0, 0.0]]),
        band=SlopeBand(m=0.0, L=1e-4),
        rho=rho,
        alpha=1.0,
        beta=0.0,
    )
    cert = await certify_problem(problem, SolveExecutor(options=SolverOptions()))
    assert isinstance(cert, Certificate)
    report = verify_certificate(cert, problem, n_initial=20, horizon=200, n_functions=6)
    assert report.passed, report.summary_lines()

    horizon = 200
    decay = rho ** np.arange(horizon + 1)
    for seed, kind in enumerate(["saturating", "deadzone", "smooth-sigmoid", "random-piecewise-linear"]):
        f = make_profile(kind, problem.band, 1, seed=seed)
        for x0 in ([1.0, 0.0], [0.0, -2.0], [3.0, 1.5]):
            K = cert.decay_bound(x0)
            traj = simulate_loop(problem.system, f.gradient, x0, horizon)
            norms = np.linalg.norm(traj.x, axis=1)
            assert np.all(norms <= K * decay * (1 + 1e-6) + 1e-12)
