"""Classical Schrödinger bridge via Fortet iteration on the Schrödinger factors.

For ``f = 0``, ``q = 0`` and ``g = sigma = sqrt(eps) I`` the factors
``phi`` (backward) and ``phihat`` (forward) solve heat equations with
diffusivity ``eps / 2`` and ``rho = phi * phihat``.  The value function is
``S = log phi``, which satisfies the dual HJB equation
``S_t + eps/2 |grad S|^2 + eps/2 lap S = 0`` exactly, and the optimal
control is ``u = g^T grad S = sqrt(eps) grad S``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calculus
from .errors import ConvergenceError, DomainError
from .fields import Grid, TimeGrid, integrate, read_field_csv, write_field_csv
from .problem import ProblemData

log = logging.getLogger(__name__)

ABS_FLOOR = 1e-300
KERNEL_WIDTH_SD = 8.0
FACTOR_NAMES = ("rho", "S", "R", "phi", "phihat")


def _extend_log_quadratic(u: np.ndarray, w: int) -> np.ndarray:
    """Pad the last axis by `w` ghost nodes per side.

    Ghost values continue ``log u`` by the quadratic through the three edge
    nodes (curvature clamped to be non-positive, values capped at the row
    maximum).  Gaussian tails are continued exactly.  Rows whose edge values
    are not all positive get zero padding instead.
    """
    j = np.arange(1, w + 1)
    cap = np.log(np.maximum(np.max(u, axis=-1, keepdims=True), ABS_FLOOR))

    def side(edge):
        pos = np.all(edge > 0, axis=-1, keepdims=True)
        le = np.log(np.where(pos, edge, 1.0))
        s = le[..., :1] - le[..., 1:2]
        c = np.minimum(le[..., :1] - 2 * le[..., 1:2] + le[..., 2:3], 0.0)
        ext = np.minimum(le[..., :1] + s * j + 0.5 * c * j * (j + 1), cap)
        return np.where(pos, np.exp(ext), 0.0)

    left = side(u[..., :3])[..., ::-1]
    right = side(u[..., ::-1][..., :3])
    return np.concatenate([left, u, right], axis=-1)


class HeatStepper:
    """Gaussian-kernel propagator for a fixed duration.

    The kernel has variance ``eps * tau`` per axis, is truncated at 8
    standard deviations and renormalized to unit discrete mass.  With
    ``boundary="extrapolate"`` the field is continued past the box by
    :func:`_extend_log_quadratic` before convolving; ``"truncate"`` treats it
    as zero outside.  The kernel is symmetric, so forward and backward
    propagation are the same operator.
    """

    def __init__(self, grid: Grid, tau: float, eps: float, boundary: str = "extrapolate"):
        if not tau > 0:
            raise ValueError("propagation time must be positive")
        if boundary not in ("extrapolate", "truncate"):
            raise ValueError(f"unknown boundary mode {boundary!r}")
        self.grid = grid
        self.boundary = boundary
        var = eps * tau
        sd = np.sqrt(var)
        self.kernels = []
        for h, width in zip(grid.spacing, grid.width):
            if KERNEL_WIDTH_SD * sd > width:
                raise DomainError(
                    f"heat kernel half-width {KERNEL_WIDTH_SD * sd:.3g} exceeds domain width {width:.3g}")
            w = max(int(np.ceil(KERNEL_WIDTH_SD * sd / h)), 1)
            offsets = h * np.arange(-w, w + 1)
            k = np.exp(-offsets**2 / (2 * var))
            self.kernels.append(k / k.sum())

    def _along(self, u: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
        w = (k.size - 1) // 2
        v = np.moveaxis(u, axis, -1)
        if self.boundary == "extrapolate":
            ext = _extend_log_quadratic(v, w)
        else:
            pad = [(0, 0)] * (v.ndim - 1) + [(w, w)]
            ext = np.pad(v, pad)
        rows = ext.reshape(-1, ext.shape[-1])
        out = np.empty((rows.shape[0], v.shape[-1]))
        for r in range(rows.shape[0]):
            out[r] = np.convolve(rows[r], k, mode="valid")
        return np.moveaxis(out.reshape(v.shape), -1, axis)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        for ax, k in enumerate(self.kernels):
            u = self._along(u, k, ax - self.grid.dim)
        return u


def heat_propagate(u: np.ndarray, grid: Grid, tau: float, eps: float, direction: str = "forward",
                   boundary: str = "extrapolate") -> np.ndarray:
    """Propagate a field by the heat semigroup with kernel variance ``eps * tau``.

    `direction` is ``"forward"`` (``phihat``, forward heat equation) or
    ``"backward"`` (``phi``, backward heat equation solved from the terminal
    time); for this symmetric kernel the two coincide.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return HeatStepper(grid, tau, eps, boundary)(u)


@dataclass
class BridgeSolution:
    """Solution of the classical bridge on the full space-time grid.

    Arrays have shape ``(steps + 1, *grid.shape)``.
    """

    grid: Grid
    timegrid: TimeGrid
    eps: float
    lam: float
    rho: np.ndarray
    S: np.ndarray
    R: np.ndarray
    phi: np.ndarray
    phihat: np.ndarray
    log: list[dict] = field(default_factory=list)
    gauge_index: tuple[int, ...] = ()
    mass_error: float = 0.0
    floor_events: int = 0

    @property
    def canonical_timegrid(self) -> TimeGrid:
        """Clock ``tau = eps * t`` on which the bridge has unit noise."""
        return self.timegrid.scaled(self.eps)

    @property
    def iterations(self) -> int:
        return len(self.log)

    def marginal_errors(self, rho0: np.ndarray, rho1: np.ndarray) -> tuple[float, float]:
        g = self.grid
        prod = self.phi * self.phihat
        return (float(integrate(np.abs(prod[0] - rho0), g)), float(integrate(np.abs(prod[-1] - rho1), g)))


def _floored(u: np.ndarray, rel_floor: float, abs_floor: float) -> tuple[np.ndarray, int]:
    floor = max(abs_floor, rel_floor * float(np.max(u)))
    hits = int(np.count_nonzero(u < floor))
    return np.maximum(u, floor), hits


def solve_bridge(data: ProblemData, tol: float = 1e-10, max_iter: int = 50, rel_floor: float = 0.0,
                 abs_floor: float = ABS_FLOOR, boundary: str = "extrapolate") -> BridgeSolution:
    """Fortet iteration for the classical bridge.

    Each iteration sets ``phi(t1) = rho1 / phihat(t1)``, propagates `phi`
    back to ``t0``, sets ``phihat(t0) = rho0 / phi(t0)`` and propagates it
    forward.  Both sweeps use the same one-step heat operator as the final
    slices, so ``phi`` and ``phihat`` are discrete heat solutions on every
    slice.  Stops once both L1 marginal errors are below `tol`.

    Raises:
        ConvergenceError: if `max_iter` iterations do not reach `tol`.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if data.rho1 is None:
        raise ValueError("the bridge needs a terminal density")
    if not data.is_classical():
        raise ValueError("solve_bridge requires f = 0, q = 0 and g = sigma = sqrt(eps) I")
    grid, tg = data.grid, data.timegrid
    M = tg.steps
    step = HeatStepper(grid, tg.dt, data.eps, boundary)
    rho0, rho1 = data.rho0, data.rho1

    phi = np.empty((M + 1,) + grid.shape)
    phihat = np.empty_like(phi)
    phihat[M] = 1.0
    history: list[dict] = []
    floor_events = 0
    converged = False
    for it in range(1, max_iter + 1):
        den, hits1 = _floored(phihat[M], rel_floor, abs_floor)
        phi[M] = rho1 / den
        for j in range(M - 1, -1, -1):
            phi[j] = step(phi[j + 1])
        err0 = float(integrate(np.abs(phi[0] * phihat[0] - rho0), grid)) if it > 1 else float("inf")
        den, hits0 = _floored(phi[0], rel_floor, abs_floor)
        phihat[0] = rho0 / den
        for j in range(1, M + 1):
            phihat[j] = step(phihat[j - 1])
        err1 = float(integrate(np.abs(phi[M] * phihat[M] - rho1), grid))
        floor_events += hits0 + hits1
        history.append({"iteration": it, "err0": err0, "err1": err1, "floored": hits0 + hits1})
        log.debug("fortet %d: err0=%.3e err1=%.3e", it, err0, err1)
        if err0 < tol and err1 < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Fortet iteration did not reach tol={tol:g} in {max_iter} iterations", history)

    # gauge: S(t0, center) = 0
    ci = grid.center_index()
    c = phi[(0,) + ci]
    phi /= c
    phihat *= c

    rho = phi * phihat
    mass = integrate(rho, grid)
    mass_error = float(np.max(np.abs(mass - 1.0)))
    rho = rho / mass.reshape((-1,) + (1,) * grid.dim)
    S = np.log(np.maximum(phi, abs_floor))
    R = 0.5 * np.log(np.maximum(rho, abs_floor))
    if floor_events:
        log.warning("density floor applied %d times during the iteration", floor_events)
    return BridgeSolution(grid, tg, data.eps, data.lam, rho, S, R, phi, phihat, history, ci, mass_error,
                          floor_events)


def optimal_control_field(sol: BridgeSolution, data: ProblemData) -> np.ndarray:
    """``u = g^T grad S`` on every slice, shape ``(steps + 1, *grid.shape, m)``."""
    g = data.sample()["g"]
    gradS = calculus.gradient(sol.S, sol.grid)
    return np.einsum("...ji,...j->...i", g, gradS)


def save_solution(sol: BridgeSolution, outdir: str | Path, rho0=None, rho1=None) -> Path:
    """One CSV per slice per field under ``fields/<name>/`` plus ``solution.json``."""
    outdir = Path(outdir)
    for name in FACTOR_NAMES:
        d = outdir / "fields" / name
        d.mkdir(parents=True, exist_ok=True)
        series = getattr(sol, name)
        for j in range(series.shape[0]):
            write_field_csv(d / f"t{j:04d}.csv", sol.grid, {name: series[j]})
    for name, rho in (("rho0", rho0), ("rho1", rho1)):
        if rho is not None:
            write_field_csv(outdir / "fields" / f"{name}.csv", sol.grid, {name: rho})
    meta = {
        "kind": "sb",
        "grid": sol.grid.to_dict(),
        "timegrid": sol.timegrid.to_dict(),
        "epsilon": sol.eps,
        "lambda": sol.lam,
        "gauge_index": list(sol.gauge_index),
        "mass_error": sol.mass_error,
        "floor_events": sol.floor_events,
        "iterations": sol.log,
    }
    (outdir / "solution.json").write_text(json.dumps(meta, indent=2))
    return outdir


def load_solution(outdir: str | Path) -> tuple[BridgeSolution, dict[str, np.ndarray]]:
    """Read a directory written by :func:`save_solution`; also returns stored endpoints."""
    outdir = Path(outdir)
    meta = json.loads((outdir / "solution.json").read_text())
    grid = Grid.from_dict(meta["grid"])
    tg = TimeGrid.from_dict(meta["timegrid"])
    series = {}
    for name in FACTOR_NAMES:
        d = outdir / "fields" / name
        series[name] = np.stack([read_field_csv(d / f"t{j:04d}.csv", grid)[name] for j in range(tg.steps + 1)])
    ends = {}
    for name in ("rho0", "rho1"):
        p = outdir / "fields" / f"{name}.csv"
        if p.exists():
            ends[name] = read_field_csv(p, grid)[name]
    sol = BridgeSolution(grid, tg, meta["epsilon"], meta["lambda"], log=meta["iterations"],
                         gauge_index=tuple(meta["gauge_index"]), mass_error=meta["mass_error"],
                         floor_events=meta["floor_events"], **series)
    return sol, ends
