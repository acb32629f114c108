"""Residuals of the optimality PDEs, the wave-function PDE and the identities between them.

Every check returns a :class:`ResidualReport`.  Norms are taken over the
interior region: a band of nodes is dropped on every side (``DiffOpts``) and,
for time series, the first and last slice as well; norms over all nodes are
reported too.  ``scale`` is the L-infinity norm of the largest constituent
term over the same region, and a single-level check passes when
``linf <= tol * scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import calculus as C
from .calculus import DiffOpts
from .fields import Grid, TimeGrid
from .potentials import Coefficients, Jet, PotentialField, closed_loop_drift, drift_divergence, v_sb

PDE_TOL = 5e-3
IDENTITY_TOL = 1e-10
SLOPE_RANGE = (1.7, 2.3)
ROUNDOFF = 1e-11


@dataclass
class ResidualReport:
    check: str
    grid: dict
    l2: float
    linf: float
    scale: float
    passed: bool
    tol: float
    l2_all: float = float("nan")
    linf_all: float = float("nan")
    slope: float | None = None
    slope_linf: float | None = None
    levels: list[dict] = field(default_factory=list)
    field: np.ndarray | None = field(default=None, repr=False)

    @property
    def relative(self) -> float:
        return self.linf / self.scale if self.scale > 0 else (0.0 if self.linf == 0 else float("inf"))

    def to_dict(self) -> dict:
        out = {"check": self.check, "grid": self.grid, "l2": self.l2, "linf": self.linf, "scale": self.scale}
        if self.slope is not None or self.levels:
            out["slope"] = self.slope
            out["slope_linf"] = self.slope_linf
        out["pass"] = bool(self.passed)
        out.update({"tol": self.tol, "l2_inclusive": self.l2_all, "linf_inclusive": self.linf_all})
        if self.levels:
            out["levels"] = self.levels
        return out


def grid_info(grid: Grid, timegrid: TimeGrid | None) -> dict:
    info = {"n": list(grid.points), "h": list(grid.spacing)}
    if timegrid is not None:
        info.update({"M": timegrid.steps, "dt": timegrid.dt})
    return info


def interior(a: np.ndarray, grid: Grid, opts: DiffOpts = DiffOpts(), timed: bool = True) -> np.ndarray:
    """Restrict a field (optionally with leading time axis) to the interior region."""
    w = opts.width
    sl = [slice(None)] * a.ndim
    lead = a.ndim - grid.dim
    if timed and lead >= 1:
        sl[0] = slice(1, -1)
    if w:
        for k in range(grid.dim):
            sl[lead + k] = slice(w, -w)
    return a[tuple(sl)]


def _l2(r: np.ndarray, grid: Grid, dt: float | None) -> float:
    return float(np.sqrt(np.sum(np.abs(r) ** 2) * grid.cell_volume * (dt or 1.0)))


def make_report(check: str, terms: list[np.ndarray], grid: Grid, timegrid: TimeGrid | None, tol: float,
                opts: DiffOpts = DiffOpts(), mask: np.ndarray | None = None) -> ResidualReport:
    """Sum `terms` into a residual field and measure it."""
    r = sum(terms)
    if mask is not None:
        r = np.where(mask, r, 0.0)
        terms = [np.where(mask, t, 0.0) for t in terms]
    timed = timegrid is not None
    dt = timegrid.dt if timed else None
    ri = interior(r, grid, opts, timed)
    scale = max(float(np.max(np.abs(interior(np.broadcast_to(t, r.shape), grid, opts, timed)), initial=0.0))
                for t in terms)
    linf = float(np.max(np.abs(ri), initial=0.0))
    return ResidualReport(
        check=check, grid=grid_info(grid, timegrid), l2=_l2(ri, grid, dt), linf=linf, scale=scale,
        passed=bool(linf <= tol * scale), tol=tol, l2_all=_l2(r, grid, dt),
        linf_all=float(np.max(np.abs(r), initial=0.0)), field=r,
    )


def _need_dt(j: Jet, name: str) -> np.ndarray:
    if j.dt is None:
        raise ValueError(f"the {name} jet needs a time derivative")
    return j.dt


def _need_wlap(j: Jet, name: str) -> np.ndarray:
    if j.wlap is None:
        raise ValueError(f"the {name} jet needs its weighted Laplacian")
    return j.wlap


# ----------------------------------------------------------------------------- optimality system

def primal_terms(rho: Jet, S: Jet, co: Coefficients) -> list[np.ndarray]:
    """``rho_t + div(rho v) - Lap_Sigma(rho)/2`` with ``v = f + gg grad S``; divergence by the product rule."""
    v = closed_loop_drift(S, co)
    return [_need_dt(rho, "rho"), C.inner(rho.grad, v), rho.value * drift_divergence(S, co),
            -0.5 * _need_wlap(rho, "rho")]


def dual_terms(S: Jet, co: Coefficients) -> list[np.ndarray]:
    return [_need_dt(S, "S"), C.inner(S.grad, co.f), 0.5 * C.quad(S.grad, co.gg, S.grad),
            0.5 * C.frob(co.Sigma, S.hess), -co.q]


def r_dynamics_terms(R: Jet, S: Jet, co: Coefficients) -> list[np.ndarray]:
    return [
        _need_dt(R, "R"),
        C.inner(R.grad, closed_loop_drift(S, co)),
        0.5 * drift_divergence(S, co),
        -0.5 * _need_wlap(R, "R"),
        -C.quad(R.grad, co.Sigma, R.grad),
        -(0.25 - 0.5 * R.value) * co.ddiv_sigma,
    ]


def primal_residual(rho: Jet, S: Jet, co: Coefficients, grid: Grid, timegrid: TimeGrid, tol: float = PDE_TOL,
                    opts: DiffOpts = DiffOpts()) -> ResidualReport:
    return make_report("primal", primal_terms(rho, S, co), grid, timegrid, tol, opts)


def dual_residual(S: Jet, co: Coefficients, grid: Grid, timegrid: TimeGrid, tol: float = PDE_TOL,
                  opts: DiffOpts = DiffOpts()) -> ResidualReport:
    return make_report("dual", dual_terms(S, co), grid, timegrid, tol, opts)


def r_dynamics_residual(R: Jet, S: Jet, co: Coefficients, grid: Grid, timegrid: TimeGrid, tol: float = PDE_TOL,
                        opts: DiffOpts = DiffOpts(), mask: np.ndarray | None = None) -> ResidualReport:
    return make_report("r_dynamics", r_dynamics_terms(R, S, co), grid, timegrid, tol, opts, mask)


# ----------------------------------------------------------------------------- wave function

def schrodinger_terms(psi: np.ndarray, V: PotentialField, Sigma: np.ndarray, lam: float, grid: Grid,
                      dt: float) -> list[np.ndarray]:
    """``i lam psi_t + (lam^2/2) Lap_Sigma(psi) - V psi``; Lap_Sigma acts on real and imaginary parts."""
    psi = np.asarray(psi, dtype=complex)
    wl = C.weighted_laplacian(psi.real, Sigma, grid) + 1j * C.weighted_laplacian(psi.imag, Sigma, grid)
    return [1j * lam * C.time_derivative(psi, dt), 0.5 * lam**2 * wl, -V.values * psi]


def schrodinger_residual(psi: np.ndarray, V: PotentialField, Sigma: np.ndarray, lam: float, grid: Grid,
                         timegrid: TimeGrid, tol: float = PDE_TOL, opts: DiffOpts = DiffOpts()) -> ResidualReport:
    terms = schrodinger_terms(psi, V, Sigma, lam, grid, timegrid.dt)
    return make_report(f"schrodinger[{V.variant}]", terms, grid, timegrid, tol, opts)


# ----------------------------------------------------------------------------- Bohm correspondence

def bohm_r_terms(R: Jet, S: Jet, V: PotentialField) -> list[np.ndarray]:
    """Residual of ``R_t = -<grad R, grad S> - Lap S / 2 + Im V_SB``."""
    return [_need_dt(R, "R"), C.inner(R.grad, S.grad), 0.5 * S.lap, -V.imag]


def bohm_s_terms(S: Jet) -> list[np.ndarray]:
    """Residual of ``S_t = -|grad S|^2 / 2 - Lap S / 2``."""
    return [_need_dt(S, "S"), 0.5 * C.inner(S.grad, S.grad), 0.5 * S.lap]


def bohm_amplitude_terms(R: Jet, S: Jet) -> list[np.ndarray]:
    """Bohm's amplitude equation (unit mass) in ``A = exp(R)``, divided by ``A``.

    ``A_t + A Lap S / 2 + <grad A, grad S> = 0`` with the chain rule
    ``A_t = A R_t`` and ``grad A = A grad R``.
    """
    A = np.exp(R.value)
    At = A * _need_dt(R, "R")
    gA = A[..., None] * R.grad
    return [At / A, 0.5 * S.lap, C.inner(gA, S.grad) / A]


def bohm_correspondence(R: Jet, S: Jet, grid: Grid, timegrid: TimeGrid, V: PotentialField | None = None,
                        tol: float = PDE_TOL, identity_tol: float = IDENTITY_TOL,
                        opts: DiffOpts = DiffOpts()) -> dict[str, ResidualReport]:
    """(a) R equation with ``Im V_SB``, (b) S equation, (c) the identity
    ``Bohm amplitude residual - (a) residual = Im V_SB`` for any fields."""
    V = v_sb(R, S) if V is None else V
    a_terms = bohm_r_terms(R, S, V)
    b_terms = bohm_s_terms(S)
    bohm = bohm_amplitude_terms(R, S)
    c_terms = bohm + [-t for t in a_terms] + [-V.imag]
    return {
        "bohm_r": make_report("bohm_r", a_terms, grid, timegrid, tol, opts),
        "bohm_s": make_report("bohm_s", b_terms, grid, timegrid, tol, opts),
        "bohm_identity": make_report("bohm_identity", c_terms, grid, timegrid, identity_tol, opts),
    }


# ----------------------------------------------------------------------------- identities

def wlap_identity_terms(rho: Jet, R: Jet, co: Coefficients) -> list[np.ndarray]:
    """``Lap_Sigma(rho)/(4 rho) - [Lap_Sigma(R)/2 + |grad R|^2_Sigma + (1/4 - R/2) ddiv Sigma]``."""
    return [
        _need_wlap(rho, "rho") / (4 * rho.value),
        -0.5 * _need_wlap(R, "R"),
        -C.quad(R.grad, co.Sigma, R.grad),
        -(0.25 - 0.5 * R.value) * co.ddiv_sigma,
    ]


def wlap_identity_residual(rho: np.ndarray, Sigma: np.ndarray, grid: Grid, tol: float = PDE_TOL,
                    opts: DiffOpts = DiffOpts()) -> ResidualReport:
    """Finite-difference residual of the weighted-Laplacian identity for ``R = log(rho)/2``."""
    rho = np.asarray(rho, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    R = 0.5 * np.log(rho)
    rj = Jet(rho, C.gradient(rho, grid), C.hessian(rho, grid), wlap=C.weighted_laplacian(rho, Sigma, grid))
    Rj = Jet(R, C.gradient(R, grid), C.hessian(R, grid), wlap=C.weighted_laplacian(R, Sigma, grid))
    co = Coefficients(f=0, div_f=0, gg=0, div_gg=0, Sigma=Sigma, div_sigma=C.matrix_divergence(Sigma, grid),
                      ddiv_sigma=C.double_divergence(Sigma, grid), q=0)
    return make_report("wlap_identity", wlap_identity_terms(rj, Rj, co), grid, None, tol, opts)


def im_vsb_deviation(R: Jet, rho: Jet, floor: float = 1e-6) -> float:
    """Largest relative gap between ``Im V_SB`` and ``Lap(rho) / (4 rho)`` where ``rho > floor * max``.

    The gap at a node is measured against the magnitude of the terms there,
    ``max(|Lap R|/2, |grad R|^2, |Lap(rho)/(4 rho)|)``.
    """
    im = v_sb(R, R).imag
    target = rho.lap / (4 * rho.value)
    ref = np.maximum.reduce([np.abs(0.5 * R.lap), C.inner(R.grad, R.grad), np.abs(target)])
    mask = rho.value > floor * np.max(rho.value)
    ref = np.where(ref > 0, ref, 1.0)
    return float(np.max(np.abs(im - target)[mask] / ref[mask], initial=0.0))


# ----------------------------------------------------------------------------- refinement

def convergence_slope(hs, norms) -> float | None:
    """Least-squares slope of ``log norm`` against ``log h``; None if undefined."""
    hs = np.asarray(hs, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if hs.size < 3 or np.any(~(norms > 0)) or np.any(~np.isfinite(norms)):
        return None
    return float(np.polyfit(np.log(hs), np.log(norms), 1)[0])


def combine_levels(reports: list[ResidualReport], slope_range=SLOPE_RANGE, norm: str = "l2",
                   identity: bool = False) -> ResidualReport:
    """Fold per-level reports of one check into a refinement report.

    PDE checks pass when the slope of the chosen norm lies in `slope_range`;
    identity checks pass when every level passes its own tolerance.
    """
    if not reports:
        raise ValueError("no levels to combine")
    hs = [min(r.grid["h"]) for r in reports]
    slope = convergence_slope(hs, [getattr(r, norm) for r in reports])
    slope_inf = convergence_slope(hs, [r.linf for r in reports])
    if identity:
        passed = all(r.passed for r in reports)
    elif all(r.relative <= ROUNDOFF for r in reports):
        # exact up to round-off at every level: the fitted slope is noise
        slope = slope_inf = None
        passed = True
    else:
        passed = slope is not None and slope_range[0] <= slope <= slope_range[1]
    fine = reports[-1]
    levels = [{k: v for k, v in r.to_dict().items() if k not in ("check",)} for r in reports]
    return ResidualReport(check=fine.check, grid=fine.grid, l2=fine.l2, linf=fine.linf, scale=fine.scale,
                          passed=bool(passed), tol=fine.tol, l2_all=fine.l2_all, linf_all=fine.linf_all,
                          slope=slope, slope_linf=slope_inf, levels=levels)


def refinement_study(tag: str, levels: int = 3, **kwargs) -> dict[str, ResidualReport]:
    """Rerun a named pipeline on `levels` successively halved grids; see :mod:`sbwave.pipelines`."""
    from .pipelines import refine

    return refine(tag, levels, **kwargs)
