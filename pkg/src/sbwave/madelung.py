"""Madelung transform ``psi = exp(R + i S / lam)``, Born density and control recovery."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calculus
from .fields import Grid, write_field_csv


class PhaseWrapWarning(UserWarning):
    """Adjacent nodes differ in phase by a large fraction of a turn; S / lam is under-resolved."""


# largest unwrapped phase step between neighbours before warning
MAX_PHASE_STEP = 0.5 * np.pi


@dataclass(frozen=True)
class WaveField:
    """Complex wave function on a grid, shape ``(..., *grid.shape)``."""

    psi: np.ndarray
    lam: float
    grid: Grid

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        psi = np.asarray(self.psi, dtype=complex)
        if psi.shape[psi.ndim - self.grid.dim:] != self.grid.shape:
            raise ValueError(f"wave shape {psi.shape} does not end with grid shape {self.grid.shape}")
        object.__setattr__(self, "psi", psi)

    @property
    def conj(self) -> np.ndarray:
        """The conjugate wave ``psi^dagger``."""
        return np.conj(self.psi)

    def modulus_log(self) -> np.ndarray:
        return np.log(np.abs(self.psi))

    def phase(self) -> np.ndarray:
        """Unwrapped phase, continuous along grid lines (see :func:`unwrap_phase`)."""
        return unwrap_phase(np.angle(self.psi), self.grid)

    def save_slices(self, outdir: str | Path) -> None:
        """One CSV per slice with columns ``psi_re, psi_im``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        series = self.psi.reshape((-1,) + self.grid.shape)
        for j, p in enumerate(series):
            write_field_csv(outdir / f"t{j:04d}.csv", self.grid, {"psi_re": p.real, "psi_im": p.imag})


def to_wave(R: np.ndarray, S: np.ndarray, lam: float, grid: Grid) -> WaveField:
    """``psi = e^R (cos(S/lam) + i sin(S/lam))`` per node."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    if R.shape != S.shape:
        raise ValueError(f"R and S shapes differ: {R.shape} vs {S.shape}")
    theta = S / lam
    amp = np.exp(R)
    return WaveField(amp * np.cos(theta) + 1j * amp * np.sin(theta), lam, grid)


def born_density(w: WaveField) -> tuple[np.ndarray, float]:
    """``rho = psi psi^dagger`` as a real field, plus the largest imaginary residue."""
    prod = w.psi * w.conj
    return prod.real.copy(), float(np.max(np.abs(prod.imag), initial=0.0))


def unwrap_phase(theta: np.ndarray, grid: Grid, warn: bool = True) -> np.ndarray:
    """Remove 2 pi jumps along grid lines.

    Each line along the last spatial axis is unwrapped, then in 2D the lines
    are shifted so the column through the centre node is continuous too.
    """
    out = np.unwrap(theta, axis=-1)
    if grid.dim == 2:
        c = grid.center_index()[1]
        col = out[..., :, c]
        shift = np.unwrap(col, axis=-1) - col
        out = out + shift[..., None]
    if warn:
        worst = 0.0
        for k in range(grid.dim):
            worst = max(worst, float(np.max(np.abs(np.diff(out, axis=k - grid.dim)), initial=0.0)))
        if worst > MAX_PHASE_STEP:
            warnings.warn(f"phase step {worst:.3f} rad between neighbouring nodes; grid too coarse for S/lambda",
                          PhaseWrapWarning, stacklevel=2)
    return out


def recover_control(w: WaveField, g: np.ndarray, lam: float | None = None) -> tuple[np.ndarray, float]:
    """``u = -(i lam / 2) g^T grad(log psi - log psi^dagger)``.

    Both logarithms use the unwrapped phase.  Returns the real part, shape
    ``(..., *grid.shape, m)``, and the largest imaginary magnitude.
    """
    lam = w.lam if lam is None else lam
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    logmod = w.modulus_log()
    theta = w.phase()
    log_psi = logmod + 1j * theta
    log_psi_dag = logmod - 1j * theta
    grad = calculus.gradient(log_psi - log_psi_dag, w.grid)
    u = -0.5j * lam * np.einsum("...ji,...j->...i", np.asarray(g), grad)
    return u.real.copy(), float(np.max(np.abs(u.imag), initial=0.0))


def from_wave(w: WaveField) -> tuple[np.ndarray, np.ndarray]:
    """Inverse transform: ``(R, S)`` with ``S`` determined up to multiples of ``2 pi lam``."""
    rho, _ = born_density(w)
    return 0.5 * np.log(rho), w.lam * w.phase()
