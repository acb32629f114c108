"""Named end-to-end pipelines and the refinement driver.

``"sb"``: classical bridge between two Gaussians, solved by Fortet
iteration, then every residual check.  ``"manufactured-<tag>"``: a catalog
case integrated forward and checked against the general potential.
``"wlap_identity"``: the weighted-Laplacian identity on random smooth fields.
``"constant"``: constant fields, for which every residual vanishes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import verifier as Vf
from .bridge import BridgeSolution, solve_bridge
from .calculus import DiffOpts
from .fields import Grid, TimeGrid, normalize_density
from .madelung import to_wave
from .manufactured import ManufacturedCase, PrimalRun, build_case, integrate_primal
from .potentials import fd_coefficients, fd_jet, v_casb, v_sb
from .problem import ProblemData
from .synthetic import random_density, random_spd

DENSITY_FLOOR = 1e-300

SB_DEFAULTS = {"lower": -5.0, "upper": 5.0, "points": 256, "steps": 100, "eps": 0.5, "lam": 1.0,
               "t0": 0.0, "t1": 1.0, "mean0": -1.0, "var0": 0.25, "mean1": 1.0, "var1": 0.25, "tol": 1e-10,
               "max_iter": 50, "dim": 1, "rho0": None, "rho1": None}

IDENTITY_CHECKS = {"bohm_identity"}


@dataclass
class LevelResult:
    checks: dict[str, Vf.ResidualReport]
    artifacts: dict = field(default_factory=dict)


def run_checks(jobs: dict[str, Callable[[], object]]) -> dict[str, Vf.ResidualReport]:
    """Run independent checks concurrently; a job may return one report or a dict of them."""
    out: dict[str, Vf.ResidualReport] = {}
    with ThreadPoolExecutor(max_workers=min(4, len(jobs))) as pool:
        futures = {name: pool.submit(fn) for name, fn in jobs.items()}
        for name, fut in futures.items():
            res = fut.result()
            if isinstance(res, dict):
                out.update(res)
            else:
                out[name] = res
    return out


def gaussian_density(grid: Grid, mean, var: float) -> np.ndarray:
    X = grid.mesh()
    d = X - np.asarray(mean, dtype=float)
    return normalize_density(np.exp(-np.sum(d**2, axis=-1) / (2 * var)), grid)


def sb_problem(**params) -> ProblemData:
    """Bridge problem; `rho0` / `rho1` may be callables ``grid -> density``, else Gaussians are used."""
    p = {**SB_DEFAULTS, **params}
    dim = p["dim"]
    grid = Grid((p["lower"],) * dim, (p["upper"],) * dim, (p["points"],) * dim)
    tg = TimeGrid(p["t0"], p["t1"], p["steps"])
    rho0 = p["rho0"](grid) if p["rho0"] else gaussian_density(grid, [p["mean0"]] * dim, p["var0"])
    rho1 = p["rho1"](grid) if p["rho1"] else gaussian_density(grid, [p["mean1"]] * dim, p["var1"])
    return ProblemData.schrodinger_bridge(grid, tg, rho0, rho1, eps=p["eps"], lam=p["lam"])


def identity_series(grid: Grid, steps: int, scale: float = 1.0) -> np.ndarray:
    n = grid.dim
    return np.broadcast_to(scale * np.eye(n), (steps + 1,) + grid.shape + (n, n))


def sb_checks(sol: BridgeSolution, data: ProblemData, opts: DiffOpts = DiffOpts(),
              tol: float = Vf.PDE_TOL) -> LevelResult:
    """Every check that applies to a classical bridge solution.

    The wave-function and Bohm checks run on the clock ``tau = eps t``, where
    the pair ``(rho, S)`` solves the unit-noise bridge and the potential is
    V_SB with ``lambda = 1``.  The optimality PDEs use the physical clock and
    the problem's own coefficients.
    """
    grid = sol.grid
    tg = sol.timegrid
    tgc = sol.canonical_timegrid
    smp = data.sample()
    co = fd_coefficients(smp["f"], smp["g"], smp["Sigma"], smp["q"], grid)
    R, S = sol.R, sol.S

    def wave():
        Rc, Sc = fd_jet(R, grid, tgc.dt), fd_jet(S, grid, tgc.dt)
        V = v_sb(Rc, Sc)
        psi = to_wave(R, S, 1.0, grid).psi
        rep = Vf.schrodinger_residual(psi, V, identity_series(grid, tg.steps), 1.0, grid, tgc, tol, opts)
        rep.check = "schrodinger"
        return rep

    def primal():
        return Vf.primal_residual(fd_jet(sol.rho, grid, tg.dt, co.Sigma), fd_jet(S, grid, tg.dt), co, grid, tg,
                                  tol, opts)

    def dual():
        return Vf.dual_residual(fd_jet(S, grid, tg.dt), co, grid, tg, tol, opts)

    def rdyn():
        return Vf.r_dynamics_residual(fd_jet(R, grid, tg.dt, co.Sigma), fd_jet(S, grid, tg.dt), co, grid, tg,
                                      tol, opts)

    def bohm():
        return Vf.bohm_correspondence(fd_jet(R, grid, tgc.dt), fd_jet(S, grid, tgc.dt), grid, tgc, tol=tol,
                                      opts=opts)

    checks = run_checks({"schrodinger": wave, "primal": primal, "dual": dual, "r_dynamics": rdyn,
                         "bohm": bohm})
    return LevelResult(checks, {"solution": sol, "data": data})


def run_sb(opts: DiffOpts = DiffOpts(), **params) -> LevelResult:
    p = {**SB_DEFAULTS, **params}
    data = sb_problem(**p)
    sol = solve_bridge(data, tol=p["tol"], max_iter=p["max_iter"])
    return sb_checks(sol, data, opts)


def manufactured_checks(case: ManufacturedCase, run: PrimalRun, opts: DiffOpts = DiffOpts(),
                        tol: float = Vf.PDE_TOL, mask_floor: float = 1e-3) -> LevelResult:
    """Checks for a manufactured run; the log-density equation is judged where ``rho > mask_floor * max``."""
    grid, tg, lam = case.grid, case.timegrid, case.lam
    data = case.problem()
    smp = data.sample()
    co = fd_coefficients(smp["f"], smp["g"], smp["Sigma"], smp["q"], grid)
    rho = run.rho
    R = 0.5 * np.log(np.maximum(rho, DENSITY_FLOOR))
    S = case.S_series()
    Rj = fd_jet(R, grid, tg.dt, co.Sigma)
    Sj = fd_jet(S, grid, tg.dt)
    mask = rho > mask_floor * np.max(rho, axis=tuple(range(1, rho.ndim)), keepdims=True)

    def wave():
        V = v_casb(Rj, Sj, co, lam)
        psi = to_wave(R, S, lam, grid).psi
        rep = Vf.schrodinger_residual(psi, V, co.Sigma, lam, grid, tg, tol, opts)
        rep.check = "schrodinger"
        return rep

    jobs = {
        "schrodinger": wave,
        "primal": lambda: Vf.primal_residual(fd_jet(rho, grid, tg.dt, co.Sigma), Sj, co, grid, tg, tol, opts),
        "dual": lambda: Vf.dual_residual(Sj, co, grid, tg, tol, opts),
        "r_dynamics": lambda: Vf.r_dynamics_residual(Rj, Sj, co, grid, tg, tol, opts, mask=mask),
    }
    return LevelResult(run_checks(jobs), {"case": case, "run": run, "coefficients": co})


def run_manufactured(tag: str, opts: DiffOpts = DiffOpts(), points: int | None = None, steps: int | None = None,
                     alpha: float = 0.5, lam: float = 1.0, cfl: float = 0.9) -> LevelResult:
    case = build_case(tag, points, steps, alpha=alpha, lam=lam)
    run = integrate_primal(case, cfl=cfl)
    return manufactured_checks(case, run, opts)


def run_wlap_identity(opts: DiffOpts = DiffOpts(), points: int = 128, dim: int = 1, seed: int = 0,
               half_width: float = 3.0) -> LevelResult:
    grid = Grid((-half_width,) * dim, (half_width,) * dim, (points,) * dim)
    rng = np.random.default_rng(seed)
    rho = random_density(grid, rng)
    Sigma = random_spd(grid, rng)
    return LevelResult({"wlap_identity": Vf.wlap_identity_residual(rho, Sigma, grid, opts=opts)}, {"rho": rho, "Sigma": Sigma})


def run_constant(opts: DiffOpts = DiffOpts(), points: int = 64, steps: int = 16) -> LevelResult:
    """Constant ``R``, zero ``S`` and constant coefficients: every residual is exactly zero."""
    grid = Grid.line(-1.0, 1.0, points)
    tg = TimeGrid(0.0, 1.0, steps)
    shape = (steps + 1,) + grid.shape
    R = np.full(shape, -0.3)
    S = np.zeros(shape)
    Sig = identity_series(grid, steps, 0.7)
    z = np.zeros(shape)
    co = fd_coefficients(z[..., None], identity_series(grid, steps), Sig, z, grid)
    Rj, Sj = fd_jet(R, grid, tg.dt, Sig), fd_jet(S, grid, tg.dt)
    V = v_casb(Rj, Sj, co, 1.0)
    psi = to_wave(R, S, 1.0, grid).psi
    checks = {
        "schrodinger": Vf.schrodinger_residual(psi, V, Sig, 1.0, grid, tg, opts=opts),
        "dual": Vf.dual_residual(Sj, co, grid, tg, opts=opts),
    }
    checks["schrodinger"].check = "schrodinger"
    return LevelResult(checks)


def run_pipeline(tag: str, level: int = 0, opts: DiffOpts = DiffOpts(), **params) -> LevelResult:
    """Run pipeline `tag` at refinement `level` (mesh width and slice spacing halved per level)."""
    f = 2**level
    if tag == "sb":
        p = {**SB_DEFAULTS, **params}
        p["points"], p["steps"] = p["points"] * f, p["steps"] * f
        return run_sb(opts, **p)
    if tag.startswith("manufactured-"):
        case_tag = tag.split("-", 1)[1]
        p = dict(params)
        base = p.pop("points", None) or (48 if case_tag == "2d" else 256)
        steps = p.pop("steps", None) or base // 2
        return run_manufactured(case_tag, opts, points=base * f, steps=steps * f, **p)
    if tag == "wlap_identity":
        p = dict(params)
        base = p.pop("points", 128)
        return run_wlap_identity(opts, points=base * f, **p)
    if tag == "constant":
        p = dict(params)
        return run_constant(opts, points=p.get("points", 64) * f, steps=p.get("steps", 16) * f)
    raise ValueError(f"unknown pipeline {tag!r}")


def refine(tag: str, levels: int = 3, opts: DiffOpts = DiffOpts(), norm: str | None = None,
           slope_range=Vf.SLOPE_RANGE, **params) -> dict[str, Vf.ResidualReport]:
    """Refinement study: per-check reports with fitted convergence slopes."""
    if levels < 1:
        raise ValueError("need at least one level")
    norm = norm or ("linf" if tag == "wlap_identity" else "l2")
    per_level = [run_pipeline(tag, k, opts, **params).checks for k in range(levels)]
    out = {}
    for name in per_level[0]:
        reps = [lv[name] for lv in per_level]
        out[name] = Vf.combine_levels(reps, slope_range, norm, identity=name in IDENTITY_CHECKS)
    return out
