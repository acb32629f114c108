"""Random smooth fields for identity and convergence checks.

Fields are short trigonometric series with random phases and decaying
amplitudes, so every derivative stays bounded independently of the mesh.
"""

from __future__ import annotations

import numpy as np

from .fields import Grid, normalize_density


def smooth_function(grid: Grid, rng: np.random.Generator, modes: int = 3, amplitude: float = 1.0,
                    leading: tuple[int, ...] = ()) -> np.ndarray:
    """Smooth random field with values in ``[-amplitude, amplitude]``.

    `leading` prepends axes (e.g. time) whose entries get independent
    random phases that vary smoothly along the first leading axis.
    """
    X = grid.mesh()
    out = np.zeros(leading + grid.shape)
    norm = 0.0
    w = [2 * np.pi / wd for wd in grid.width]
    s = np.linspace(0.0, 1.0, leading[0]) if leading else None
    for k in range(1, modes + 1):
        c = rng.uniform(-1, 1)
        phase = rng.uniform(0, 2 * np.pi)
        drift = rng.uniform(-1, 1)
        dirs = rng.normal(size=grid.dim)
        arg = sum(k * w[a] * dirs[a] * X[..., a] for a in range(grid.dim)) * 0.5
        if leading:
            arg = arg + (phase + drift * s).reshape(leading[:1] + (1,) * (len(leading) - 1 + grid.dim))
        else:
            arg = arg + phase
        out = out + c / k**2 * np.sin(arg)
        norm += abs(c) / k**2
    return amplitude * out / max(norm, 1e-300)


def random_density(grid: Grid, rng: np.random.Generator, modes: int = 3, width: float | None = None,
                   leading: tuple[int, ...] = ()) -> np.ndarray:
    """Positive smooth density ``exp(smooth - |x - c|^2 / (2 width^2))``, unit mass per slice."""
    X = grid.mesh()
    mid = 0.5 * (np.asarray(grid.lower) + np.asarray(grid.upper))
    width = width or 0.3 * min(grid.width)
    envelope = -np.sum((X - mid) ** 2, axis=-1) / (2 * width**2)
    logp = smooth_function(grid, rng, modes, 1.0, leading) + envelope
    return normalize_density(np.exp(logp), grid)


def random_spd(grid: Grid, rng: np.random.Generator, modes: int = 2, strength: float = 0.4,
               leading: tuple[int, ...] = ()) -> np.ndarray:
    """Smooth symmetric positive-definite matrix field ``L L^T + 0.1 I``."""
    n = grid.dim
    L = np.zeros(leading + grid.shape + (n, n))
    for i in range(n):
        for j in range(n):
            base = 1.0 if i == j else 0.0
            L[..., i, j] = base + smooth_function(grid, rng, modes, strength, leading)
    return np.einsum("...ik,...jk->...ij", L, L) + 0.1 * np.eye(n)


def random_vector(grid: Grid, rng: np.random.Generator, amplitude: float = 1.0,
                  leading: tuple[int, ...] = ()) -> np.ndarray:
    return np.stack([smooth_function(grid, rng, 3, amplitude, leading) for _ in range(grid.dim)], axis=-1)


def random_matrix(grid: Grid, rng: np.random.Generator, cols: int | None = None, amplitude: float = 0.5,
                  leading: tuple[int, ...] = ()) -> np.ndarray:
    """Smooth ``n x m`` field ``I + noise`` (identity padded when ``m != n``)."""
    n = grid.dim
    m = cols or n
    G = np.zeros(leading + grid.shape + (n, m))
    for i in range(n):
        for j in range(m):
            G[..., i, j] = (1.0 if i == j else 0.0) + smooth_function(grid, rng, 2, amplitude, leading)
    return G
