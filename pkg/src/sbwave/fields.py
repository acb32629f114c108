"""Uniform grids, time slicing and grid-sampled fields.

Fields are plain numpy arrays sampled at grid nodes.  Spatial axes come
last for scalar fields, ``(..., N_1[, N_2])``; vector fields append one
component axis ``(..., N_1[, N_2], n)`` and matrix fields two
``(..., N_1[, N_2], n, n)``.  Any leading axes (typically time) broadcast.
Complex fields are complex arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateDensityError, DomainError

MIN_POINTS = 16
MIN_STEPS = 8


@dataclass(frozen=True)
class Grid:
    """Tensor-product uniform lattice in one or two dimensions.

    Attributes:
        lower: per-axis lower bound.
        upper: per-axis upper bound.
        points: per-axis node count (nodes include both bounds).
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "points", tuple(int(v) for v in self.points))
        if not (len(self.lower) == len(self.upper) == len(self.points)):
            raise ValueError("lower, upper and points must have equal length")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        for lo, up, n in zip(self.lower, self.upper, self.points):
            if not (np.isfinite(lo) and np.isfinite(up)):
                raise ValueError("grid bounds must be finite")
            if up <= lo:
                raise ValueError(f"upper bound {up} must exceed lower bound {lo}")
            if n < MIN_POINTS:
                raise ValueError(f"need at least {MIN_POINTS} points per axis, got {n}")

    @classmethod
    def line(cls, lower: float, upper: float, points: int) -> "Grid":
        return cls((lower,), (upper,), (points,))

    @classmethod
    def square(cls, lower: float, upper: float, points: int) -> "Grid":
        return cls((lower, lower), (upper, upper), (points, points))

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((up - lo) / (n - 1) for lo, up, n in zip(self.lower, self.upper, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def width(self) -> tuple[float, ...]:
        return tuple(up - lo for lo, up in zip(self.lower, self.upper))

    def axes(self) -> list[np.ndarray]:
        # lo + k*h keeps the spacing exactly uniform; the last node may differ from
        # `upper` by one ulp.
        return [lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.points)]

    def mesh(self) -> np.ndarray:
        """Node coordinates with shape ``(*shape, dim)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def center_index(self) -> tuple[int, ...]:
        return tuple(n // 2 for n in self.points)

    def refined(self, factor: int = 2) -> "Grid":
        """Same box with `factor` times as many points per axis."""
        return Grid(self.lower, self.upper, tuple(n * factor for n in self.points))

    def contains(self, x: np.ndarray, slack: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower) - slack
        up = np.asarray(self.upper) + slack
        return np.all((x >= lo) & (x <= up), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "points": list(self.points)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["points"]))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform slicing ``t_j = t0 + j*dt`` of ``[t0, t1]`` into `steps` intervals."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "steps", int(self.steps))
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.steps < MIN_STEPS:
            raise ValueError(f"need at least {MIN_STEPS} time steps, got {self.steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def horizon(self) -> float:
        return self.t1 - self.t0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def scaled(self, factor: float) -> "TimeGrid":
        """The same slicing on the rescaled clock ``tau = factor * t``."""
        return TimeGrid(factor * self.t0, factor * self.t1, self.steps)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.t1, self.steps * factor)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t1": self.t1, "steps": self.steps}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeGrid":
        return cls(d["t0"], d["t1"], d["steps"])


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Nodal weights of the tensor trapezoidal rule, shape ``grid.shape``."""
    ws = []
    for h, n in zip(grid.spacing, grid.points):
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        ws.append(w)
    if grid.dim == 1:
        return ws[0]
    return np.multiply.outer(ws[0], ws[1])


def integrate(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Trapezoidal integral over the spatial axes (leading axes are kept)."""
    w = trapezoid_weights(grid)
    axes = tuple(range(-grid.dim, 0))
    return np.sum(np.asarray(u) * w, axis=axes)


def normalize_density(rho: np.ndarray, grid: Grid) -> np.ndarray:
    """Rescale a nonnegative field to unit trapezoidal mass."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DegenerateDensityError("density has negative values")
    mass = integrate(rho, grid)
    if np.any(~(mass > 0)):
        raise DegenerateDensityError("density has zero mass")
    if np.ndim(mass):
        mass = mass.reshape(mass.shape + (1,) * grid.dim)
    return rho / mass


def l1_distance(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    return integrate(np.abs(np.asarray(a) - np.asarray(b)), grid)


def check_symmetric(sigma: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Validate a matrix field; reject asymmetry above `rtol` of its scale."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim < 2 or sigma.shape[-1] != sigma.shape[-2]:
        raise ValueError(f"matrix field needs trailing (n, n) axes, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ValueError("matrix field has non-finite entries")
    scale = max(np.max(np.abs(sigma)), np.finfo(float).tiny)
    asym = np.max(np.abs(sigma - np.swapaxes(sigma, -1, -2)))
    if asym > rtol * scale:
        raise ValueError(f"matrix field is not symmetric (max asymmetry {asym:.3e})")
    return sigma


def interp(u: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal values at many points.

    Args:
        u: field of shape ``(*grid.shape, *trailing)``.
        points: coordinates, shape ``(..., dim)``; must lie inside the box.

    Returns:
        array of shape ``(..., *trailing)``.
    """
    u = np.asarray(u)
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != grid.dim:
        raise ValueError(f"points need trailing axis of length {grid.dim}")
    tol = 1e-12 * max(grid.width)
    if not np.all(grid.contains(pts, slack=tol)):
        raise DomainError("interpolation point outside grid bounds")
    idx, frac = [], []
    for k, (lo, h, n) in enumerate(zip(grid.lower, grid.spacing, grid.points)):
        s = (pts[..., k] - lo) / h
        i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
        idx.append(i)
        frac.append(np.clip(s - i, 0.0, 1.0))
    trailing = u.shape[grid.dim:]
    out = np.zeros(pts.shape[:-1] + trailing, dtype=np.result_type(u, float))
    for corner in np.ndindex(*(2,) * grid.dim):
        w = np.ones(pts.shape[:-1])
        sel = []
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
            sel.append(idx[k] + c)
        out += w.reshape(w.shape + (1,) * len(trailing)) * u[tuple(sel)]
    return out


def eval_interp(u: np.ndarray, grid: Grid, x: Sequence[float] | float) -> float:
    """Multilinear interpolation of a scalar field at a single point."""
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    return float(interp(u, grid, pt[None, :])[0])


def _column_names(grid: Grid) -> list[str]:
    return ["x"] if grid.dim == 1 else ["x1", "x2"]


def write_field_csv(path: str | Path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    """One row per node: coordinates then the named values, 17 significant digits."""
    coords = grid.mesh().reshape(-1, grid.dim)
    data = [coords] + [np.asarray(v, dtype=float).reshape(coords.shape[0], -1) for v in columns.values()]
    names = _column_names(grid)
    for name, v in columns.items():
        k = int(np.prod(np.shape(v)[grid.dim:]))
        names += [name] if k == 1 else [f"{name}_{j}" for j in range(k)]
    np.savetxt(path, np.hstack(data), fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_field_csv(path: str | Path, grid: Grid) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_field_csv` for scalar columns."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != int(np.prod(grid.shape)):
        raise ValueError(f"{path}: expected {np.prod(grid.shape)} rows, got {data.shape[0]}")
    return {name: data[:, j].reshape(grid.shape) for j, name in enumerate(header) if j >= grid.dim}
