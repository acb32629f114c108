"""Euler-Maruyama particles driven by a gridded feedback control.

Random numbers come from a counter-based generator: step ``j`` uses Philox
keyed by ``(seed, j)`` and particle ``i``, noise channel ``c`` reads raw
outputs ``2k`` and ``2k+1`` with ``k = i * p + c``, turned into one normal
by Box-Muller.  A particle's noise therefore depends only on
``(seed, i, j, c)``, never on how many particles run or in which order.

Trajectory dumps are headerless little-endian float64 (``<f8``) arrays in C
order with shape ``(steps + 1, particles, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BlowUpError
from .fields import Grid, integrate, interp, trapezoid_weights, write_field_csv
from .problem import ProblemData

ESCAPE_FRACTION = 0.10
INIT_STREAM = 2**63  # Philox key word reserved for the initial draw
_TWO53 = float(2**53)


def _uniform_open(raw: np.ndarray) -> np.ndarray:
    """53-bit uniforms in (0, 1]."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53


def _raw(seed: int, stream: int, count: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    return bg.random_raw(count)


def counter_normals(seed: int, step: int, particles: int, channels: int) -> np.ndarray:
    """Standard normals of shape ``(particles, channels)`` for one step."""
    raw = _raw(seed, step, 2 * particles * channels).reshape(particles, channels, 2)
    u1 = _uniform_open(raw[..., 0])
    u2 = _uniform_open(raw[..., 1])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _cell_edges(grid: Grid) -> list[np.ndarray]:
    """Node-centred cells clipped to the box (half cells at the walls)."""
    edges = []
    for ax, lo, up in zip(grid.axes(), grid.lower, grid.upper):
        mid = 0.5 * (ax[1:] + ax[:-1])
        edges.append(np.concatenate([[lo], mid, [up]]))
    return edges


def sample_density(rho: np.ndarray, grid: Grid, particles: int, seed: int) -> np.ndarray:
    """Exact sampler for the node-cell piecewise-constant version of `rho`."""
    mass = (np.asarray(rho, dtype=float) * trapezoid_weights(grid)).ravel()
    if np.any(mass < 0) or not mass.sum() > 0:
        raise ValueError("density must be nonnegative with positive mass")
    cdf = np.cumsum(mass)
    cdf /= cdf[-1]
    raw = _raw(seed, INIT_STREAM, particles * (1 + grid.dim)).reshape(particles, 1 + grid.dim)
    u = _uniform_open(raw)
    flat = np.minimum(np.searchsorted(cdf, u[:, 0], side="left"), cdf.size - 1)
    idx = np.unravel_index(flat, grid.shape)
    edges = _cell_edges(grid)
    X = np.empty((particles, grid.dim))
    for k in range(grid.dim):
        lo = edges[k][idx[k]]
        hi = edges[k][idx[k] + 1]
        X[:, k] = lo + (hi - lo) * (1.0 - u[:, 1 + k])
    return X


def histogram(X: np.ndarray, grid: Grid) -> np.ndarray:
    """Particle density on node cells, normalized to unit trapezoidal mass."""
    counts, _ = np.histogramdd(X, bins=_cell_edges(grid))
    return counts / (X.shape[0] * trapezoid_weights(grid))


def histogram_distance(hist: np.ndarray, rho: np.ndarray, grid: Grid) -> float:
    """L1 distance between a normalized histogram and a density on the same grid."""
    return float(integrate(np.abs(np.asarray(hist) - np.asarray(rho)), grid))


@dataclass
class EnsembleResult:
    positions: np.ndarray
    histogram: np.ndarray
    seed: int
    particles: int
    reflections: int
    l1: float | None = None
    trajectory_path: Path | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "particles": self.particles, "reflections": self.reflections, "l1": self.l1,
                "trajectory": str(self.trajectory_path) if self.trajectory_path else None}

    def save_histogram(self, path: str | Path, grid: Grid) -> None:
        write_field_csv(path, grid, {"density": self.histogram})


def _reflect(X: np.ndarray, grid: Grid, step: int) -> int:
    lo = np.asarray(grid.lower)
    up = np.asarray(grid.upper)
    slack = ESCAPE_FRACTION * np.asarray(grid.width)
    far = (X < lo - slack) | (X > up + slack) | ~np.isfinite(X)
    if np.any(far):
        rows = np.nonzero(np.any(far, axis=1))[0]
        raise BlowUpError(
            f"{rows.size} particles left the padded domain at step {step}",
            {"step": step, "count": int(rows.size), "first": int(rows[0]), "position": X[rows[0]].tolist()},
        )
    below = X < lo
    above = X > up
    X[:] = np.where(below, 2 * lo - X, X)
    X[:] = np.where(above, 2 * up - X, X)
    return int(below.sum() + above.sum())


def simulate(data: ProblemData, u: np.ndarray | None, particles: int, seed: int,
             rho1: np.ndarray | None = None, dump: str | Path | None = None,
             start: np.ndarray | None = None) -> EnsembleResult:
    """Euler-Maruyama ``x += (f + g u) dt + sigma sqrt(dt) xi`` on the problem's time grid.

    Args:
        u: control on every slice, shape ``(steps + 1, *grid.shape, m)``;
            ``None`` means no control.  Evaluated by multilinear interpolation.
        rho1: density compared with the terminal histogram (defaults to ``data.rho1``).
        dump: optional path for the binary trajectory dump.
        start: initial positions; sampled from ``data.rho0`` when omitted.
    """
    if particles < 1:
        raise ValueError("need at least one particle")
    grid, tg = data.grid, data.timegrid
    X = sample_density(data.rho0, grid, particles, seed) if start is None else np.array(start, dtype=float)
    if X.shape != (particles, grid.dim):
        raise ValueError(f"start positions must have shape {(particles, grid.dim)}")
    sqdt = np.sqrt(tg.dt)
    reflections = 0
    fh = open(dump, "wb") if dump is not None else None
    try:
        if fh:
            fh.write(X.astype("<f8").tobytes())
        for j, t in enumerate(tg.times[:-1]):
            drift = data.f(t, X)
            if u is not None:
                g = data.g(t, X)
                drift = drift + np.einsum("nij,nj->ni", g, interp(u[j], grid, X))
            s = data.sigma(t, X)
            xi = counter_normals(seed, j, particles, s.shape[-1])
            X = X + drift * tg.dt + sqdt * np.einsum("nij,nj->ni", s, xi)
            reflections += _reflect(X, grid, j + 1)
            if fh:
                fh.write(X.astype("<f8").tobytes())
    finally:
        if fh:
            fh.close()
    hist = histogram(X, grid)
    target = data.rho1 if rho1 is None else rho1
    l1 = histogram_distance(hist, target, grid) if target is not None else None
    return EnsembleResult(X, hist, seed, particles, reflections, l1, Path(dump) if dump else None)


def load_trajectory(path: str | Path, steps: int, particles: int, dim: int) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").reshape(steps + 1, particles, dim)
