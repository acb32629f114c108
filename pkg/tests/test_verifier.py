import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import X1, T, random_log_density, random_smooth, sympy_coefficients, sympy_jet
from sbwave import verifier as Vf
from sbwave.calculus import DiffOpts
from sbwave.fields import Grid, TimeGrid
from sbwave.madelung import to_wave
from sbwave.pipelines import identity_series, refine, run_constant, run_manufactured
from sbwave.potentials import PotentialField, fd_coefficients, fd_jet, v_casb, v_sb


@pytest.fixture(scope="module")
def sb_study():
    return refine("sb", 3, points=256, steps=100)


@pytest.fixture(scope="module")
def case_i():
    return run_manufactured("i", points=256)


@pytest.mark.parametrize("check", ["schrodinger", "primal", "dual", "r_dynamics", "bohm_r", "bohm_s"])
def test_sb_residuals_second_order(sb_study, check):
    rep = sb_study[check]
    assert rep.passed and 1.7 <= rep.slope <= 2.3


def test_sb_bohm_identity_every_level(sb_study):
    rep = sb_study["bohm_identity"]
    assert rep.passed and all(lv["pass"] for lv in rep.levels)


def test_report_schema(sb_study):
    d = json.loads(json.dumps(sb_study["primal"].to_dict()))
    for key in ("check", "grid", "l2", "linf", "scale", "slope", "pass"):
        assert key in d
    assert set(d["grid"]) == {"n", "h", "M", "dt"}
    assert len(d["levels"]) == 3 and d["l2"] >= 0 and d["linf"] >= 0


def test_primal_detects_perturbation(case_i):
    case, run, co = (case_i.artifacts[k] for k in ("case", "run", "coefficients"))
    grid, tg = case.grid, case.timegrid
    Sj = fd_jet(case.S_series(), grid, tg.dt)
    x = grid.axes()[0]

    def norm(eps):
        rho = run.rho + eps * np.sin(x)
        return Vf.primal_residual(fd_jet(rho, grid, tg.dt, co.Sigma), Sj, co, grid, tg).l2

    base = norm(0.0)
    norms = [norm(e) for e in (0.01, 0.02, 0.04)]
    assert norms[0] >= 5 * base
    assert norms[0] < norms[1] < norms[2]


def test_dual_zero_for_flat_value():
    g = Grid.line(-2.0, 2.0, 40)
    tg = TimeGrid(0.0, 1.0, 8)
    n = (tg.steps + 1,) + g.shape
    X = g.mesh()
    f = np.broadcast_to(np.sin(X), n + (1,))
    co = fd_coefficients(f, identity_series(g, tg.steps), identity_series(g, tg.steps), np.zeros(n), g)
    rep = Vf.dual_residual(fd_jet(np.zeros(n), g, tg.dt), co, g, tg)
    assert rep.linf == 0 and rep.l2 == 0 and rep.passed


def test_schrodinger_detects_potential_shift():
    res = run_manufactured("i", points=128)
    case, run, co = (res.artifacts[k] for k in ("case", "run", "coefficients"))
    grid, tg = case.grid, case.timegrid
    R = 0.5 * np.log(np.maximum(run.rho, 1e-300))
    S = case.S_series()
    V = v_casb(fd_jet(R, grid, tg.dt, co.Sigma), fd_jet(S, grid, tg.dt), co, case.lam)
    psi = to_wave(R, S, case.lam, grid).psi
    shifted = PotentialField(V.values + 0.1, V.variant, V.scale)
    r0 = Vf.schrodinger_residual(psi, V, co.Sigma, case.lam, grid, tg)
    r1 = Vf.schrodinger_residual(psi, shifted, co.Sigma, case.lam, grid, tg)
    psi_norm = Vf._l2(Vf.interior(psi, grid), grid, tg.dt)
    assert r1.l2 >= 0.09 * psi_norm > r0.l2


def test_r_dynamics_zero_for_static_fields():
    g = Grid.line(-2.0, 2.0, 40)
    tg = TimeGrid(0.0, 1.0, 8)
    n = (tg.steps + 1,) + g.shape
    X = g.mesh()
    R = np.broadcast_to(0.3 * np.sin(X[..., 0]), n).copy()
    zero_m = np.zeros(n + (1, 1))
    co = fd_coefficients(np.zeros(n + (1,)), zero_m, zero_m, np.zeros(n), g)
    rep = Vf.r_dynamics_residual(fd_jet(R, g, tg.dt, zero_m), fd_jet(np.zeros(n), g, tg.dt), co, g, tg)
    assert rep.linf == 0


def test_r_dynamics_is_half_primal_over_rho():
    g = Grid.line(-3.0, 3.0, 40)
    tg = TimeGrid(0.0, 1.0, 8)
    co, Sig = sympy_coefficients([0.3 * sp.sin(X1)], sp.Matrix([[1 + 0.2 * sp.cos(X1)]]),
                                 sp.Matrix([[1 + 0.3 * sp.sin(X1 + T)]]), 0.2 * sp.cos(X1), g, tg.times)
    rng = np.random.default_rng(0)
    logrho = random_log_density(rng, 1) + 0.3 * sp.sin(X1 + 2 * T)
    rho = sympy_jet(sp.exp(logrho), g, tg.times, Sig)
    R = sympy_jet(logrho / 2, g, tg.times, Sig)
    S = sympy_jet(random_smooth(rng, 1, timed=True), g, tg.times)
    primal = sum(Vf.primal_terms(rho, S, co))
    rdyn = sum(Vf.r_dynamics_terms(R, S, co))
    mask = rho.value > 1e-10 * rho.value.max()
    assert np.max(np.abs(rdyn - primal / (2 * rho.value))[mask]) <= 1e-8


def test_bohm_static_constant_R():
    g = Grid.line(-2.0, 2.0, 40)
    tg = TimeGrid(0.0, 1.0, 8)
    n = (tg.steps + 1,) + g.shape
    R = fd_jet(np.full(n, -0.7), g, tg.dt)
    S = fd_jet(np.zeros(n), g, tg.dt)
    reps = Vf.bohm_correspondence(R, S, g, tg)
    assert reps["bohm_r"].linf == 0 and reps["bohm_s"].linf == 0


def test_refinement_constant_fields():
    reps = refine("constant", 3)
    for rep in reps.values():
        assert rep.passed and rep.slope is None and rep.linf == 0
        assert all(lv["linf"] == 0 for lv in rep.levels)


def test_constant_pipeline_exact():
    for rep in run_constant().checks.values():
        assert rep.linf == 0


def test_wlap_identity_refinement_2d():
    rep = refine("wlap_identity", 3, points=64, dim=2, seed=7)["wlap_identity"]
    assert 1.7 <= rep.slope <= 2.3


def test_convergence_slope():
    hs = [0.4, 0.2, 0.1]
    assert Vf.convergence_slope(hs, [16 * h**2 for h in hs]) == pytest.approx(2.0)
    assert Vf.convergence_slope(hs[:2], [1.0, 0.25]) is None
    assert Vf.convergence_slope(hs, [1.0, 0.0, 0.1]) is None


def test_boundary_modes_report_inclusive_norms(case_i):
    case, run, co = (case_i.artifacts[k] for k in ("case", "run", "coefficients"))
    grid, tg = case.grid, case.timegrid
    Sj = fd_jet(case.S_series(), grid, tg.dt)
    rj = fd_jet(run.rho, grid, tg.dt, co.Sigma)
    band = Vf.primal_residual(rj, Sj, co, grid, tg)
    full = Vf.primal_residual(rj, Sj, co, grid, tg, opts=DiffOpts("one-sided"))
    assert band.linf <= band.linf_all and full.linf >= band.linf


def test_interior_region():
    g = Grid.line(0.0, 1.0, 20)
    a = np.zeros((5, 20))
    assert Vf.interior(a, g).shape == (3, 14)
    assert Vf.interior(a[0], g, timed=False).shape == (14,)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_bohm_identity_property(seed, dim):
    rng = np.random.default_rng(seed)
    g = Grid((-2.0,) * dim, (2.0,) * dim, (40 if dim == 1 else 20,) * dim)
    tg = TimeGrid(0.0, 1.0, 8)
    R = rng.normal(size=(tg.steps + 1,) + g.shape) * 0.3
    S = rng.normal(size=R.shape)
    rep = Vf.bohm_correspondence(fd_jet(R, g, tg.dt), fd_jet(S, g, tg.dt), g, tg)["bohm_identity"]
    assert rep.linf <= 1e-10 * rep.scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_im_vsb_deviation_property(seed):
    g = Grid.line(-4.0, 4.0, 101)
    logrho = random_log_density(np.random.default_rng(seed), 1)
    assert Vf.im_vsb_deviation(sympy_jet(logrho / 2, g), sympy_jet(sp.exp(logrho), g)) <= 1e-8


def test_vsb_identity_fails_for_mismatched_density():
    g = Grid.line(-4.0, 4.0, 101)
    R = sympy_jet(-X1**2 / 4, g)
    rho = sympy_jet(sp.exp(-X1**2), g)  # not exp(2R)
    assert Vf.im_vsb_deviation(R, rho) > 0.1
    assert v_sb(R, R).variant == "SB"
