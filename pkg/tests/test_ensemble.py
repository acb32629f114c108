import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbwave.bridge import optimal_control_field, solve_bridge
from sbwave.ensemble import (counter_normals, histogram, histogram_distance, load_trajectory, sample_density,
                             simulate)
from sbwave.errors import BlowUpError
from sbwave.fields import Grid, TimeGrid, integrate
from sbwave.pipelines import gaussian_density, sb_problem
from sbwave.problem import ProblemData, scaled_identity


@pytest.fixture(scope="module")
def steered():
    data = sb_problem(points=512, steps=200)
    sol = solve_bridge(data)
    return data, optimal_control_field(sol, data)


def _free(grid, tg, sigma):
    rho = gaussian_density(grid, [0.0] * grid.dim, 0.5)
    return ProblemData(grid, tg, rho, None, sigma=scaled_identity(sigma))


def test_immobile_without_forces():
    g = Grid.square(-3.0, 3.0, 32)
    data = _free(g, TimeGrid(0.0, 1.0, 10), 0.0)
    start = sample_density(data.rho0, g, 2000, 3)
    res = simulate(data, None, 2000, 3, start=start)
    assert np.array_equal(res.positions, start) and res.l1 is None


def test_brownian_variance():
    g = Grid.line(-10.0, 10.0, 200)
    eps, T = 0.5, 1.0
    data = _free(g, TimeGrid(0.0, T, 50), np.sqrt(eps))
    n = 50_000
    res = simulate(data, None, n, 11, start=np.zeros((n, 1)))
    var = float(np.var(res.positions))
    se = eps * T * np.sqrt(2.0 / n)
    assert abs(var - eps * T) <= 3 * se


def test_histogram_distance_trivial():
    g = Grid.line(0.0, 1.0, 101)
    x = g.axes()[0]
    a = np.where(x < 0.3, 1.0, 0.0)
    b = np.where(x > 0.7, 1.0, 0.0)
    a /= float(integrate(a, g))
    b /= float(integrate(b, g))
    assert histogram_distance(a, a, g) == 0
    assert histogram_distance(a, b, g) == pytest.approx(2.0, abs=1e-12)


def test_exact_sampler_histogram():
    g = Grid.line(-5.0, 5.0, 512)
    rho = gaussian_density(g, [1.0], 0.25)
    d = [histogram_distance(histogram(sample_density(rho, g, 100_000, s), g), rho, g) for s in range(3)]
    assert max(d) <= 0.05 and np.median(d) <= 0.02 * 1.5
    assert float(integrate(histogram(sample_density(rho, g, 1000, 0), g), g)) == pytest.approx(1.0)


def test_seed_reproducible_and_count_independent():
    g = Grid.line(-3.0, 3.0, 64)
    data = _free(g, TimeGrid(0.0, 1.0, 100), 1.0)
    start = sample_density(data.rho0, g, 500, 1)
    a = simulate(data, None, 500, 7, start=start).positions
    b = simulate(data, None, 500, 7, start=start).positions
    c = simulate(data, None, 200, 7, start=start[:200]).positions
    assert np.array_equal(a, b) and np.array_equal(a[:200], c)
    assert not np.array_equal(a, simulate(data, None, 500, 8, start=start).positions)


def test_counter_normals():
    z = counter_normals(5, 3, 40_000, 2)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02
    assert np.array_equal(counter_normals(5, 3, 10, 2), counter_normals(5, 3, 20, 2)[:10])


def test_blow_up_detected():
    g = Grid.line(-1.0, 1.0, 32)
    rho = gaussian_density(g, [0.0], 0.1)
    data = ProblemData(g, TimeGrid(0.0, 1.0, 8), rho, None, f=lambda t, X: 100.0 + 0 * X)
    with pytest.raises(BlowUpError) as ei:
        simulate(data, None, 100, 0)
    assert ei.value.diagnostics["step"] == 1


def test_reflection_keeps_particles_inside():
    g = Grid.line(-1.0, 1.0, 32)
    data = _free(g, TimeGrid(0.0, 1.0, 40), 0.3)
    res = simulate(data, None, 5000, 2)
    assert np.all(g.contains(res.positions)) and res.reflections > 0


def test_trajectory_dump(tmp_path, steered):
    data, u = steered
    res = simulate(data, u, 1000, 4, dump=tmp_path / "traj.f8")
    traj = load_trajectory(tmp_path / "traj.f8", data.timegrid.steps, 1000, 1)
    assert np.array_equal(traj[-1], res.positions)
    assert (tmp_path / "traj.f8").stat().st_size == 8 * (data.timegrid.steps + 1) * 1000


def test_steering_improves_with_particles(steered):
    data, u = steered
    h = data.grid.spacing[0]
    small = [simulate(data, u, 10_000, s).l1 for s in (1, 2, 3)]
    large = [simulate(data, u, 100_000, s).l1 for s in (1, 2, 3)]
    C = np.mean(small) * np.sqrt(10_000)  # calibrated at N = 1e4
    for a, b in zip(small, large):
        assert b < a
        assert b <= C / np.sqrt(100_000) + 2 * h


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1000), st.integers(1, 50), st.integers(1, 3))
def test_counter_normals_prefix_property(seed, step, n, c):
    full = counter_normals(seed, step, n + 5, c)
    assert np.array_equal(counter_normals(seed, step, n, c), full[:n])
    assert np.all(np.isfinite(full))
