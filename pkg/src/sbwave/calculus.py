"""Second-order finite-difference operators on uniform grids.

Central differences in the interior and second-order one-sided stencils on
the boundary rows.  Every operator accepts arbitrary leading (batch/time)
axes; see :mod:`sbwave.fields` for the axis layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid


@dataclass(frozen=True)
class DiffOpts:
    """How residual norms treat the boundary.

    ``boundary="one-sided"`` keeps every node (boundary rows use the
    one-sided stencils); ``"drop-band"`` discards `band` nodes per side.
    """

    boundary: str = "drop-band"
    band: int = 3

    def __post_init__(self):
        if self.boundary not in ("one-sided", "drop-band"):
            raise ValueError(f"unknown boundary scheme {self.boundary!r}")
        if self.boundary == "drop-band" and self.band < 1:
            raise ValueError("band must be >= 1 when dropping a boundary band")

    @property
    def width(self) -> int:
        return self.band if self.boundary == "drop-band" else 0


def d1(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative along `axis`."""
    u = np.moveaxis(np.asarray(u), axis, -1)
    if u.shape[-1] < 3:
        raise ValueError("need at least 3 nodes along a differentiated axis")
    out = np.empty(u.shape, dtype=np.result_type(u, float))
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * h)
    out[..., 0] = (-3 * u[..., 0] + 4 * u[..., 1] - u[..., 2]) / (2 * h)
    out[..., -1] = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * h)
    return np.moveaxis(out, -1, axis)


def d2(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative along `axis`."""
    u = np.moveaxis(np.asarray(u), axis, -1)
    if u.shape[-1] < 4:
        raise ValueError("need at least 4 nodes along a twice-differentiated axis")
    out = np.empty(u.shape, dtype=np.result_type(u, float))
    out[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / h**2
    out[..., 0] = (2 * u[..., 0] - 5 * u[..., 1] + 4 * u[..., 2] - u[..., 3]) / h**2
    out[..., -1] = (2 * u[..., -1] - 5 * u[..., -2] + 4 * u[..., -3] - u[..., -4]) / h**2
    return np.moveaxis(out, -1, axis)


def _ax(grid: Grid, k: int) -> int:
    # spatial axis k of a scalar field with spatial axes last
    return k - grid.dim


def _mixed(u: np.ndarray, grid: Grid, i: int, j: int) -> np.ndarray:
    h = grid.spacing
    a = d1(d1(u, h[j], _ax(grid, j)), h[i], _ax(grid, i))
    b = d1(d1(u, h[i], _ax(grid, i)), h[j], _ax(grid, j))
    return 0.5 * (a + b)


def gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    return np.stack([d1(u, h, _ax(grid, k)) for k, h in enumerate(grid.spacing)], axis=-1)


def hessian(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Hessian with symmetric mixed partials; shape ``(..., n, n)``."""
    u = np.asarray(u)
    n = grid.dim
    H = np.empty(u.shape + (n, n), dtype=np.result_type(u, float))
    for i, h in enumerate(grid.spacing):
        H[..., i, i] = d2(u, h, _ax(grid, i))
        for j in range(i + 1, n):
            H[..., i, j] = H[..., j, i] = _mixed(u, grid, i, j)
    return H


def laplacian(u: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(d2(u, h, _ax(grid, k)) for k, h in enumerate(grid.spacing))


def divergence(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence of a vector field (components on the last axis)."""
    v = np.asarray(v)
    return sum(d1(v[..., k], h, _ax(grid, k)) for k, h in enumerate(grid.spacing))


def matrix_divergence(sigma: np.ndarray, grid: Grid) -> np.ndarray:
    """Row-wise divergence: ``out_i = sum_j d Sigma_ij / d x_j``."""
    sigma = np.asarray(sigma)
    return np.stack([divergence(sigma[..., i, :], grid) for i in range(grid.dim)], axis=-1)


def weighted_laplacian(rho: np.ndarray, sigma: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_ij d^2 (Sigma_ij rho) / dx_i dx_j``, differentiating the products."""
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    out = 0.0
    for i, h in enumerate(grid.spacing):
        out = out + d2(sigma[..., i, i] * rho, h, _ax(grid, i))
        for j in range(i + 1, grid.dim):
            out = out + 2.0 * _mixed(sigma[..., i, j] * rho, grid, i, j)
    return out


def double_divergence(sigma: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_ij d^2 Sigma_ij / dx_i dx_j`` (the weighted Laplacian of one)."""
    sigma = np.asarray(sigma)
    return weighted_laplacian(np.ones(sigma.shape[:-2]), sigma, grid)


def time_derivative(series: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Central differences in time; second-order one-sided at both ends."""
    return d1(series, dt, axis)


def frob(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Frobenius pairing ``<A, B> = sum_ij A_ij B_ij``."""
    return np.einsum("...ij,...ij->...", A, B)


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def quad(a: np.ndarray, M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bilinear form ``a^T M b``."""
    return np.einsum("...i,...ij,...j->...", a, M, b)


def matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", M, v)
