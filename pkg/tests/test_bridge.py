import numpy as np
import pytest

from oracles import gaussian_bridge_moments, gaussian_pdf
from sbwave.bridge import (HeatStepper, heat_propagate, load_solution, optimal_control_field, save_solution,
                           solve_bridge)
from sbwave.errors import ConvergenceError, DomainError
from sbwave.fields import Grid, TimeGrid, eval_interp, integrate
from sbwave.pipelines import gaussian_density, sb_problem
from sbwave.problem import ProblemData, scaled_identity


@pytest.fixture(scope="module")
def gauss_sb():
    data = sb_problem(points=512, steps=200)
    return data, solve_bridge(data, tol=1e-10)


def test_heat_gaussian_variance_grows():
    g = Grid.line(-10.0, 10.0, 801)
    x = g.axes()[0]
    s2, eps, tau = 0.5, 0.7, 0.9
    out = heat_propagate(gaussian_pdf(x, 0.0, s2), g, tau, eps)
    assert float(integrate(np.abs(out - gaussian_pdf(x, 0.0, s2 + eps * tau)), g)) <= 1e-6


def test_heat_preserves_constants_in_interior():
    g = Grid.line(-5.0, 5.0, 201)
    out = heat_propagate(np.ones(201), g, 0.1, 1.0, boundary="truncate")
    w = HeatStepper(g, 0.1, 1.0).kernels[0].size // 2
    assert np.allclose(out[w:-w], 1.0, atol=1e-14)
    assert np.allclose(heat_propagate(np.ones(201), g, 0.1, 1.0), 1.0, atol=1e-14)


def test_heat_semigroup():
    g = Grid.line(-10.0, 10.0, 401)
    x = g.axes()[0]
    u = gaussian_pdf(x, 0.5, 0.8)
    half = heat_propagate(heat_propagate(u, g, 0.25, 1.0), g, 0.25, 1.0)
    full = heat_propagate(u, g, 0.5, 1.0)
    assert float(integrate(np.abs(half - full), g)) <= 1e-8


def test_heat_2d_separable():
    g = Grid.square(-6.0, 6.0, 97)
    X = g.mesh()
    u = np.exp(-np.sum(X**2, -1) / 0.8)
    out = heat_propagate(u, g, 0.3, 1.0)
    ref = 0.4 / 0.7 * np.exp(-np.sum(X**2, -1) / 1.4)
    assert np.max(np.abs(out - ref)) < 1e-6


def test_heat_kernel_wider_than_domain():
    with pytest.raises(DomainError):
        heat_propagate(np.ones(32), Grid.line(0.0, 1.0, 32), 1.0, 1.0)
    with pytest.raises(ValueError):
        heat_propagate(np.ones(32), Grid.line(0.0, 1.0, 32), 0.0, 1.0)
    with pytest.raises(ValueError):
        heat_propagate(np.ones(32), Grid.line(-9.0, 9.0, 32), 0.1, 1.0, direction="sideways")


def test_equal_marginals_time_symmetric():
    g = Grid.line(-8.0, 8.0, 321)
    tg = TimeGrid(0.0, 1.0, 40)
    rho = gaussian_density(g, [0.0], 1.0)
    data = ProblemData.schrodinger_bridge(g, tg, rho, rho, eps=1.0)
    sol = solve_bridge(data, tol=1e-10)
    e0, e1 = sol.marginal_errors(rho, rho)
    assert max(e0, e1) < 1e-8
    asym = max(float(integrate(np.abs(sol.rho[j] - sol.rho[-1 - j]), g)) for j in range(tg.steps + 1))
    assert asym < 1e-6


def test_fortet_contracts():
    data = sb_problem(points=256, steps=50)
    sol = solve_bridge(data, tol=1e-8)
    errs = [e["err1"] for e in sol.log]
    assert all(b / a < 1 for a, b in zip(errs[1:], errs[2:]))


def test_solution_invariants(gauss_sb):
    data, sol = gauss_sb
    g = data.grid
    assert np.max(np.abs(integrate(sol.rho, g) - 1)) <= 1e-6
    prod = sol.phi * sol.phihat
    mask = sol.rho > 1e-10 * np.max(sol.rho)
    assert np.max(np.abs(prod / integrate(prod, g)[:, None] - sol.rho)[mask] / sol.rho[mask]) <= 1e-10
    assert float(integrate(np.abs(sol.rho[0] - data.rho0), g)) <= 1e-10
    assert float(integrate(np.abs(sol.rho[-1] - data.rho1), g)) <= 1e-10
    assert np.allclose(sol.R, 0.5 * np.log(sol.rho))
    assert sol.S[(0,) + sol.gauge_index] == 0.0
    assert sol.iterations <= 50 and sol.floor_events == 0


def test_gaussian_oracle_slices(gauss_sb):
    data, sol = gauss_sb
    x = data.grid.axes()[0]
    for j, t in enumerate(data.timegrid.times):
        m, v = gaussian_bridge_moments(t, -1.0, 0.25, 1.0, 0.25, 0.5)
        assert float(integrate(np.abs(sol.rho[j] - gaussian_pdf(x, m, v)), data.grid)) <= 1e-4


def test_control_along_mean_path(gauss_sb):
    data, sol = gauss_sb
    u = optimal_control_field(sol, data)
    for j, t in enumerate(data.timegrid.times):
        m, _ = gaussian_bridge_moments(t, -1.0, 0.25, 1.0, 0.25, 0.5)
        # the closed-loop drift g u at the mean equals the mean velocity mu1 - mu0 = 2
        assert abs(np.sqrt(0.5) * eval_interp(u[j, ..., 0], data.grid, m) - 2.0) <= 2e-3


def test_control_linear_S_and_zero_g(gauss_sb):
    data, sol = gauss_sb
    x = data.grid.axes()[0]
    lin = type(sol)(**{**sol.__dict__, "S": np.broadcast_to(0.8 * x, sol.S.shape).copy()})
    unit = ProblemData.schrodinger_bridge(data.grid, data.timegrid, data.rho0, data.rho1, eps=1.0)
    assert np.allclose(optimal_control_field(lin, unit), 0.8, atol=1e-12)
    zero = ProblemData(data.grid, data.timegrid, data.rho0, data.rho1, g=scaled_identity(0.0))
    assert np.all(optimal_control_field(sol, zero) == 0)


def test_nonconvergence_carries_log():
    data = sb_problem(points=256, steps=50)
    with pytest.raises(ConvergenceError) as ei:
        solve_bridge(data, tol=1e-14, max_iter=3)
    assert len(ei.value.log) == 3


def test_rejects_non_classical_data():
    data = sb_problem(points=128, steps=20)
    drifted = ProblemData(data.grid, data.timegrid, data.rho0, data.rho1, f=lambda t, X: -X)
    with pytest.raises(ValueError):
        solve_bridge(drifted)
    with pytest.raises(ValueError):
        solve_bridge(data, tol=0.0)


def test_2d_bridge_marginals():
    data = sb_problem(points=48, steps=20, dim=2, lower=-4.0, upper=4.0)
    sol = solve_bridge(data, tol=1e-9)
    assert max(sol.marginal_errors(data.rho0, data.rho1)) < 1e-9


def test_save_load_round_trip(tmp_path):
    data = sb_problem(points=64, steps=10)
    sol = solve_bridge(data)
    save_solution(sol, tmp_path, data.rho0, data.rho1)
    back, ends = load_solution(tmp_path)
    for name in ("rho", "S", "R", "phi", "phihat"):
        assert np.array_equal(getattr(back, name), getattr(sol, name))
    assert np.array_equal(ends["rho1"], data.rho1)
    assert back.grid == sol.grid and back.timegrid == sol.timegrid and back.eps == sol.eps
