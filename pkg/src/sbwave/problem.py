"""Control-affine bridge data: drift, input and noise matrices, state cost, endpoints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolation
from .fields import Grid, TimeGrid, integrate

# coefficient(t, X) with X of shape (..., n)
Coefficient = Callable[[float, np.ndarray], np.ndarray]


def zero_drift(t: float, X: np.ndarray) -> np.ndarray:
    return np.zeros_like(X, dtype=float)


def zero_cost(t: float, X: np.ndarray) -> np.ndarray:
    return np.zeros(X.shape[:-1])


def scaled_identity(scale: float) -> Coefficient:
    def coef(t: float, X: np.ndarray) -> np.ndarray:
        n = X.shape[-1]
        return np.broadcast_to(scale * np.eye(n), X.shape[:-1] + (n, n)).copy()

    return coef


@dataclass(frozen=True)
class ProblemData:
    """Data of the control-affine bridge on a grid.

    ``dx = (f + g u) dt + sigma dw``, running cost ``q + |u|^2 / 2``,
    endpoint densities `rho0`, `rho1`.  `lam` is the Madelung constant and
    `eps` the noise scale of the classical bridge (``g = sigma = sqrt(eps) I``).
    `rho1` may be ``None`` for manufactured cases, where it is an output.
    """

    grid: Grid
    timegrid: TimeGrid
    rho0: np.ndarray
    rho1: np.ndarray | None
    f: Coefficient = zero_drift
    g: Coefficient = field(default_factory=lambda: scaled_identity(1.0))
    sigma: Coefficient = field(default_factory=lambda: scaled_identity(1.0))
    q: Coefficient = zero_cost
    lam: float = 1.0
    eps: float = 1.0
    label: str = "custom"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.eps > 0:
            raise ValueError(f"epsilon must be positive, got {self.eps}")
        for name in ("rho0", "rho1"):
            rho = getattr(self, name)
            if rho is None:
                continue
            rho = np.asarray(rho, dtype=float)
            if rho.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {rho.shape}, grid is {self.grid.shape}")
            if np.any(rho < 0) or abs(float(integrate(rho, self.grid)) - 1.0) > 1e-8:
                raise ValueError(f"{name} must be a normalized nonnegative density")
            object.__setattr__(self, name, rho)

    @classmethod
    def schrodinger_bridge(cls, grid: Grid, timegrid: TimeGrid, rho0, rho1, eps: float = 1.0,
                           lam: float = 1.0) -> "ProblemData":
        root = float(np.sqrt(eps))
        return cls(grid, timegrid, rho0, rho1, f=zero_drift, g=scaled_identity(root),
                   sigma=scaled_identity(root), q=zero_cost, lam=lam, eps=eps, label="sb")

    def Sigma(self, t: float, X: np.ndarray) -> np.ndarray:
        s = self.sigma(t, X)
        return np.einsum("...ik,...jk->...ij", s, s)

    def sample(self, times: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Coefficients on every node and time slice, leading axis = time."""
        times = self.timegrid.times if times is None else np.atleast_1d(times)
        X = self.grid.mesh()
        out = {k: [] for k in ("f", "g", "Sigma", "q")}
        for t in times:
            out["f"].append(self.f(t, X))
            out["g"].append(self.g(t, X))
            out["Sigma"].append(self.Sigma(t, X))
            out["q"].append(self.q(t, X))
        return {k: np.stack(v) for k, v in out.items()}

    def check_a2(self, sigma_series: np.ndarray | None = None) -> float:
        """Smallest eigenvalue of Sigma over all sampled nodes; must be positive."""
        if sigma_series is None:
            sigma_series = self.sample()["Sigma"]
        lo = float(np.min(np.linalg.eigvalsh(sigma_series)))
        if not lo > 0:
            raise AssumptionViolation(f"Sigma not positive definite (min eigenvalue {lo:.3e})")
        return lo

    def is_classical(self, atol: float = 1e-14) -> bool:
        """True when f = 0, q = 0 and g = sigma = sqrt(eps) I on sampled nodes."""
        X = self.grid.mesh()
        ref = np.sqrt(self.eps) * np.eye(self.grid.dim)
        for t in (self.timegrid.t0, 0.5 * (self.timegrid.t0 + self.timegrid.t1), self.timegrid.t1):
            if np.max(np.abs(self.f(t, X))) > atol or np.max(np.abs(self.q(t, X))) > atol:
                return False
            g, s = self.g(t, X), self.sigma(t, X)
            if g.shape[-2:] != ref.shape or s.shape[-2:] != ref.shape:
                return False
            if np.max(np.abs(g - ref)) > atol or np.max(np.abs(s - ref)) > atol:
                return False
        return True
