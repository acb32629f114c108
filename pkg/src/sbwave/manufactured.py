"""Manufactured control-affine bridge instances with a known value function.

A case fixes ``S(t, x) = a(t) |x|^2 / 2 + <b(t), x>`` analytically, takes the
state cost ``q`` from the dual PDE (so that PDE holds exactly), and obtains
``rho`` by integrating the primal Fokker-Planck equation forward from
``rho0``.  The terminal slice is the induced ``rho1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import calculus as C
from .errors import InstabilityError, StepSizeError
from .fields import Grid, TimeGrid, integrate, normalize_density
from .potentials import Jet
from .problem import Coefficient, ProblemData, scaled_identity, zero_drift

log = logging.getLogger(__name__)

CATALOG = ("i", "ii", "iii", "2d")
NEGATIVE_TOL = 1e-10


@dataclass(frozen=True)
class QuadraticValue:
    """``S = a(t) |x|^2 / 2 + <b(t), x>`` with exact derivatives."""

    a: Callable[[float], float]
    b: Callable[[float], np.ndarray]
    da: Callable[[float], float]
    db: Callable[[float], np.ndarray]

    def value(self, t, X):
        return 0.5 * self.a(t) * np.sum(X**2, axis=-1) + X @ np.atleast_1d(self.b(t))

    def dt(self, t, X):
        return 0.5 * self.da(t) * np.sum(X**2, axis=-1) + X @ np.atleast_1d(self.db(t))

    def grad(self, t, X):
        return self.a(t) * X + np.atleast_1d(self.b(t))

    def hess(self, t, X):
        n = X.shape[-1]
        return np.broadcast_to(self.a(t) * np.eye(n), X.shape[:-1] + (n, n)).copy()


def _const(v):
    return lambda t: v


@dataclass(frozen=True)
class ManufacturedCase:
    """A catalog instance; `params` records the constants for the manifest."""

    tag: str
    grid: Grid
    timegrid: TimeGrid
    value: QuadraticValue
    f: Coefficient
    g: Coefficient
    sigma: Coefficient
    rho0: np.ndarray
    lam: float = 1.0
    params: dict = field(default_factory=dict)

    def Sigma(self, t, X):
        s = self.sigma(t, X)
        return np.einsum("...ik,...jk->...ij", s, s)

    def q(self, t: float, X: np.ndarray) -> np.ndarray:
        """Cost making the dual PDE exact: ``S_t + <grad S, f> + |g^T grad S|^2/2 + <Sigma, Hess S>/2``."""
        gS = self.value.grad(t, X)
        g = self.g(t, X)
        gtS = np.einsum("...ji,...j->...i", g, gS)
        return (self.value.dt(t, X) + C.inner(gS, self.f(t, X)) + 0.5 * C.inner(gtS, gtS)
                + 0.5 * C.frob(self.Sigma(t, X), self.value.hess(t, X)))

    def problem(self, rho1: np.ndarray | None = None) -> ProblemData:
        return ProblemData(self.grid, self.timegrid, self.rho0, rho1, f=self.f, g=self.g, sigma=self.sigma,
                           q=self.q, lam=self.lam, eps=1.0, label=f"manufactured-{self.tag}")

    def S_series(self) -> np.ndarray:
        X = self.grid.mesh()
        return np.stack([self.value.value(t, X) for t in self.timegrid.times])

    def S_jet(self) -> Jet:
        """Exact jet of S on every slice."""
        X = self.grid.mesh()
        ts = self.timegrid.times
        return Jet(
            value=np.stack([self.value.value(t, X) for t in ts]),
            grad=np.stack([self.value.grad(t, X) for t in ts]),
            hess=np.stack([self.value.hess(t, X) for t in ts]),
            dt=np.stack([self.value.dt(t, X) for t in ts]),
        )

    def min_sigma_eig(self) -> float:
        X = self.grid.mesh()
        return min(float(np.min(np.linalg.eigvalsh(self.Sigma(t, X)))) for t in self.timegrid.times)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "grid": self.grid.to_dict(),
            "timegrid": self.timegrid.to_dict(),
            "lambda": self.lam,
            "params": self.params,
            "q": "derived from the analytic value function through the dual PDE",
        }


def derive_q(case: ManufacturedCase) -> np.ndarray:
    """Derived state cost on every slice, shape ``(steps + 1, *grid.shape)``."""
    X = case.grid.mesh()
    return np.stack([case.q(t, X) for t in case.timegrid.times])


def _gaussian(grid: Grid, mean, var: float) -> np.ndarray:
    X = grid.mesh()
    d = X - np.asarray(mean, dtype=float)
    return normalize_density(np.exp(-np.sum(d**2, axis=-1) / (2 * var)), grid)


def _sin_noise(alpha: float, sigma0: float = 1.0) -> Coefficient:
    def sigma(t, X):
        return (sigma0 * (1.0 + alpha * np.sin(X[..., 0])))[..., None, None]

    return sigma


def _noise_2d(alpha: float, offdiag: float) -> Coefficient:
    def sigma(t, X):
        s = np.zeros(X.shape[:-1] + (2, 2))
        s[..., 0, 0] = 1.0 + alpha * np.sin(X[..., 0])
        s[..., 1, 1] = 1.0 + alpha * np.cos(X[..., 1])
        s[..., 0, 1] = offdiag
        return s

    return sigma


def build_case(tag: str, points: int | None = None, steps: int | None = None, alpha: float = 0.5,
               lam: float = 1.0) -> ManufacturedCase:
    """Catalog of manufactured cases.

    ``"i"``: constant coefficients, ``S = -x^2/2 + x/2``.
    ``"ii"``: time-varying ``a(t), b(t)``, linear drift, constant noise 0.8.
    ``"iii"``: as ``"i"`` with ``sigma(x) = 1 + alpha sin x`` (``alpha = 0`` gives ``"i"``).
    ``"2d"``: planar version with a state-dependent, non-diagonal Sigma.

    Stored slices default to ``points // 2``, so the slice spacing shrinks
    with the mesh width.
    """
    if tag not in CATALOG:
        raise ValueError(f"unknown manufactured case {tag!r}; choose from {CATALOG}")
    if not abs(alpha) < 1:
        raise ValueError("|alpha| < 1 is required for a positive-definite noise")
    one = np.ones(1)
    if tag == "2d":
        points = points or 48
        grid = Grid.square(-4.0, 4.0, points)
        tg = TimeGrid(0.0, 0.5, steps or points // 2)
        value = QuadraticValue(_const(-0.5), _const(np.array([0.3, -0.2])), _const(0.0), _const(np.zeros(2)))
        return ManufacturedCase(tag, grid, tg, value, f=lambda t, X: -0.1 * X, g=scaled_identity(1.0),
                                sigma=_noise_2d(0.2, 0.2), rho0=_gaussian(grid, [0.3, -0.2], 0.5), lam=lam,
                                params={"a": -0.5, "b": [0.3, -0.2], "drift": "-x/10", "alpha": 0.2,
                                        "sigma_offdiag": 0.2, "rho0": "gaussian([0.3,-0.2], 0.5)"})
    points = points or 256
    grid = Grid.line(-6.0, 6.0, points)
    tg = TimeGrid(0.0, 1.0, steps or points // 2)
    rho0 = _gaussian(grid, [0.5], 0.3)
    if tag == "ii":
        value = QuadraticValue(
            a=lambda t: -1.0 - 0.5 * np.sin(np.pi * t),
            b=lambda t: 0.5 * np.cos(np.pi * t) * one,
            da=lambda t: -0.5 * np.pi * np.cos(np.pi * t),
            db=lambda t: -0.5 * np.pi * np.sin(np.pi * t) * one,
        )
        return ManufacturedCase(tag, grid, tg, value, f=lambda t, X: -0.5 * X, g=scaled_identity(1.0),
                                sigma=scaled_identity(0.8), rho0=rho0, lam=lam,
                                params={"a": "-1 - sin(pi t)/2", "b": "cos(pi t)/2", "drift": "-x/2",
                                        "sigma": 0.8, "rho0": "gaussian(0.5, 0.3)"})
    value = QuadraticValue(_const(-1.0), _const(0.5 * one), _const(0.0), _const(0.0 * one))
    sigma = scaled_identity(1.0) if tag == "i" else _sin_noise(alpha)
    params = {"a": -1.0, "b": 0.5, "drift": 0, "rho0": "gaussian(0.5, 0.3)"}
    if tag == "iii":
        params["alpha"] = alpha
    return ManufacturedCase(tag, grid, tg, value, f=zero_drift, g=scaled_identity(1.0), sigma=sigma,
                            rho0=rho0, lam=lam, params=params)


@dataclass
class PrimalRun:
    """Result of :func:`integrate_primal`: slices plus integrator diagnostics."""

    rho: np.ndarray
    substeps: int
    dt: float
    cfl: float
    mass_drift: np.ndarray  # pre-normalization |mass - 1| after each internal step
    min_value: float

    def to_dict(self) -> dict:
        return {"substeps": self.substeps, "dt_internal": self.dt, "cfl": self.cfl,
                "max_mass_drift": float(np.max(self.mass_drift, initial=0.0)), "min_value": self.min_value}


def _stable_dt(h: float, n: int, sigma_max: float, drift_max: float) -> float:
    diff = h**2 / (sigma_max * n) if sigma_max > 0 else np.inf
    adv = h / drift_max if drift_max > 0 else np.inf
    return min(diff, adv)


def integrate_primal(case: ManufacturedCase, cfl: float = 0.9, substeps: int | None = None,
                     diffusion: bool = True, renormalize: bool = True) -> PrimalRun:
    """Forward-Euler, central-space integration of the closed-loop Fokker-Planck equation.

    ``rho_t = -div(rho (f + g g^T grad S)) + Lap_Sigma(rho) / 2`` with zero
    Dirichlet values on the boundary.  Each stored slice interval is split
    into `substeps` equal steps, chosen as the smallest count meeting
    ``dt <= cfl * min(h^2 / (max Sigma * n), h / max|drift|)`` unless given.

    Raises:
        StepSizeError: explicit `substeps` violate the bound.
        InstabilityError: the density dips below ``-1e-10``.
    """
    grid, tg = case.grid, case.timegrid
    h = min(grid.spacing)
    n = grid.dim
    X = grid.mesh()

    def coefficients(t):
        gS = case.value.grad(t, X)
        g = case.g(t, X)
        gg = np.einsum("...ik,...jk->...ij", g, g)
        v = case.f(t, X) + C.matvec(gg, gS)
        Sig = case.Sigma(t, X) if diffusion else np.zeros(X.shape[:-1] + (n, n))
        return v, Sig

    fine = np.linspace(tg.t0, tg.t1, 9)
    sig_max, v_max = 0.0, 0.0
    for t in fine:
        v, Sig = coefficients(t)
        sig_max = max(sig_max, float(np.max(np.abs(Sig))))
        v_max = max(v_max, float(np.max(np.abs(v))))
    limit = _stable_dt(h, n, sig_max, v_max)
    if substeps is None:
        substeps = 1 if not np.isfinite(limit) else max(1, int(np.ceil(tg.dt / (cfl * limit))))
    dt = tg.dt / substeps
    cfl_used = dt / limit if np.isfinite(limit) else 0.0
    if cfl_used > cfl * (1 + 1e-12):
        raise StepSizeError(f"time step {dt:.3e} exceeds stability bound {cfl * limit:.3e} (CFL {cfl_used:.3f})")

    edge = np.zeros(grid.shape, dtype=bool)
    for k in range(n):
        idx = [slice(None)] * n
        idx[k] = [0, -1]
        edge[tuple(idx)] = True

    rho = case.rho0.copy()
    out = [rho.copy()]
    drift_log = []
    lowest = float(np.min(rho))
    t = tg.t0
    for j in range(tg.steps):
        for s in range(substeps):
            t = tg.t0 + (j * substeps + s) * dt
            v, Sig = coefficients(t)
            rhs = -C.divergence(rho[..., None] * v, grid) + 0.5 * C.weighted_laplacian(rho, Sig, grid)
            rho = rho + dt * rhs
            rho[edge] = 0.0
            mass = float(integrate(rho, grid))
            drift_log.append(abs(mass - 1.0))
            lo = float(np.min(rho))
            lowest = min(lowest, lo)
            if lo < -NEGATIVE_TOL:
                raise InstabilityError(f"density reached {lo:.3e} at t={t + dt:.4f}")
            if renormalize:
                rho = rho / mass
        out.append(rho.copy())
    drift = np.asarray(drift_log)
    log.debug("primal run %s: %d substeps, max mass drift %.2e", case.tag, substeps, drift.max(initial=0.0))
    return PrimalRun(np.stack(out), substeps, dt, cfl_used, drift, lowest)
