"""Complex potentials of the wave-function PDE, evaluated term by term.

Every evaluator works on *jets*: a field together with its derivatives on
the same nodes.  :func:`fd_jet` builds jets with the finite differences of
:mod:`sbwave.calculus`; tests also feed exact (symbolic) jets, which is how
identities are checked at round-off level.

Notation used in names below: ``Sigma = sigma sigma^T``, ``gg = g g^T``,
``div_*`` is the row-wise matrix divergence and ``ddiv_sigma`` the double
divergence ``sum_ij d_ij Sigma_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calculus as C
from .errors import AssumptionViolation
from .fields import Grid, check_symmetric, write_field_csv

VARIANTS = ("caSB", "caSB_lambda", "caSB_one", "SB", "bohm_real")


@dataclass(frozen=True)
class Jet:
    """A scalar field series with first/second space derivatives.

    ``dt`` (time derivative) and ``wlap`` (weighted Laplacian under the
    coefficient Sigma) are optional; evaluators that need them check.
    """

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    dt: np.ndarray | None = None
    wlap: np.ndarray | None = None

    @property
    def lap(self) -> np.ndarray:
        return np.trace(self.hess, axis1=-2, axis2=-1)

    def with_wlap(self, wlap: np.ndarray) -> "Jet":
        return Jet(self.value, self.grad, self.hess, self.dt, wlap)


def fd_jet(u: np.ndarray, grid: Grid, dt: float | None = None, sigma: np.ndarray | None = None) -> Jet:
    """Finite-difference jet of `u`; time axis 0 is differentiated when `dt` is given."""
    u = np.asarray(u, dtype=float)
    return Jet(
        value=u,
        grad=C.gradient(u, grid),
        hess=C.hessian(u, grid),
        dt=None if dt is None else C.time_derivative(u, dt),
        wlap=None if sigma is None else C.weighted_laplacian(u, sigma, grid),
    )


@dataclass(frozen=True)
class Coefficients:
    """Problem coefficients and their derivative fields, sampled on the nodes."""

    f: np.ndarray
    div_f: np.ndarray
    gg: np.ndarray
    div_gg: np.ndarray
    Sigma: np.ndarray
    div_sigma: np.ndarray
    ddiv_sigma: np.ndarray
    q: np.ndarray
    g: np.ndarray | None = None

    def validate(self, min_eig: float = 0.0) -> "Coefficients":
        check_symmetric(self.Sigma)
        lo = float(np.min(np.linalg.eigvalsh(self.Sigma)))
        if not lo > min_eig:
            raise AssumptionViolation(f"Sigma not positive definite (min eigenvalue {lo:.3e})")
        return self


def fd_coefficients(f: np.ndarray, g: np.ndarray, Sigma: np.ndarray, q: np.ndarray, grid: Grid) -> Coefficients:
    """Coefficients with finite-difference divergences."""
    g = np.asarray(g, dtype=float)
    gg = np.einsum("...ik,...jk->...ij", g, g)
    return Coefficients(
        f=np.asarray(f, dtype=float),
        div_f=C.divergence(f, grid),
        gg=gg,
        div_gg=C.matrix_divergence(gg, grid),
        Sigma=np.asarray(Sigma, dtype=float),
        div_sigma=C.matrix_divergence(Sigma, grid),
        ddiv_sigma=C.double_divergence(Sigma, grid),
        q=np.asarray(q, dtype=float),
        g=g,
    )


def drift_divergence(S: Jet, co: Coefficients) -> np.ndarray:
    """``div(f + gg grad S)`` by the product rule."""
    return co.div_f + C.inner(co.div_gg, S.grad) + C.frob(co.gg, S.hess)


def closed_loop_drift(S: Jet, co: Coefficients) -> np.ndarray:
    """``f + gg grad S``."""
    return co.f + C.matvec(co.gg, S.grad)


@dataclass(frozen=True)
class PotentialField:
    """Complex potential series with its variant tag.

    `scale` is the largest magnitude among the constituent terms, the natural
    reference for relative comparisons since the terms partly cancel.
    """

    values: np.ndarray
    variant: str
    scale: float

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}")

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def shifted(self, c: complex) -> "PotentialField":
        return PotentialField(self.values + c, self.variant, self.scale)

    def save_slices(self, outdir: str | Path, grid: Grid) -> None:
        """One CSV per slice with columns ``V_re, V_im``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        series = self.values.reshape((-1,) + grid.shape)
        for j, v in enumerate(series):
            write_field_csv(outdir / f"t{j:04d}.csv", grid, {"V_re": v.real, "V_im": v.imag})


def _assemble(re_terms: list, im_terms: list, variant: str, im_factor: float = 1.0) -> PotentialField:
    re = sum(re_terms)
    im = im_factor * sum(im_terms)
    scale = max(float(np.max(np.abs(t), initial=0.0)) for t in re_terms + [im_factor * t for t in im_terms])
    return PotentialField(re + 1j * im, variant, scale)


def _need_wlap(R: Jet) -> np.ndarray:
    if R.wlap is None:
        raise ValueError("this potential needs the weighted Laplacian of R in the jet")
    return R.wlap


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def v_casb(R: Jet, S: Jet, co: Coefficients, lam: float) -> PotentialField:
    """General control-affine potential, every printed term kept separately.

    The real part keeps both ``-1/2 |grad S|^2_Sigma`` and
    ``+1/2 <grad S, gg grad S>``; they only cancel when ``Sigma = gg``.
    """
    _check_lam(lam)
    co.validate()
    l2 = lam**2
    Sig = co.Sigma
    wlapR = _need_wlap(R)
    re = [
        0.5 * l2 * co.ddiv_sigma,
        0.5 * l2 * C.frob(Sig, R.hess),
        C.inner(S.grad, co.f),
        0.5 * l2 * C.quad(R.grad, Sig, R.grad),
        -0.5 * C.quad(S.grad, Sig, S.grad),
        l2 * C.inner(co.div_sigma, R.grad),
        0.5 * C.quad(S.grad, co.gg, S.grad),
        0.5 * C.frob(Sig, S.hess),
        -co.q,
    ]
    im = [
        0.5 * C.frob(Sig, S.hess),
        C.quad(R.grad, Sig, S.grad),
        C.inner(co.div_sigma, S.grad),
        -C.inner(R.grad, closed_loop_drift(S, co)),
        -0.5 * drift_divergence(S, co),
        0.5 * wlapR,
        C.quad(R.grad, Sig, R.grad),
        (0.25 - 0.5 * R.value) * co.ddiv_sigma,
    ]
    return _assemble(re, im, "caSB", im_factor=lam)


def v_casb_lambda(R: Jet, S: Jet, co: Coefficients, lam: float) -> PotentialField:
    """Specialization for ``Sigma = lam gg``; `co.gg` is not used."""
    _check_lam(lam)
    l2 = lam**2
    Sig = co.Sigma
    wlapR = _need_wlap(R)
    re = [
        0.5 * l2 * co.ddiv_sigma,
        0.5 * l2 * C.frob(Sig, R.hess),
        0.5 * l2 * C.quad(R.grad, Sig, R.grad),
        l2 * C.inner(co.div_sigma, R.grad),
        C.inner(S.grad, co.f),
        (1.0 / (2 * lam) - 0.5) * C.quad(S.grad, Sig, S.grad),
        0.5 * C.frob(Sig, S.hess),
        -co.q,
    ]
    im = [
        0.5 * (lam - 1) * C.frob(Sig, S.hess),
        (lam - 1) * C.quad(R.grad, Sig, S.grad),
        (lam - 0.5) * C.inner(co.div_sigma, S.grad),
        -lam * C.inner(R.grad, co.f),
        -0.5 * lam * co.div_f,
        0.5 * lam * wlapR,
        lam * C.quad(R.grad, Sig, R.grad),
        (0.25 * lam - 0.5 * lam * R.value) * co.ddiv_sigma,
    ]
    return _assemble(re, im, "caSB_lambda")


def v_casb_one(R: Jet, S: Jet, co: Coefficients) -> PotentialField:
    """Specialization for ``Sigma = gg`` (input and noise channels coincide)."""
    Sig = co.Sigma
    wlapR = _need_wlap(R)
    re = [
        0.5 * co.ddiv_sigma,
        0.5 * C.frob(Sig, R.hess),
        0.5 * C.quad(R.grad, Sig, R.grad),
        C.inner(co.div_sigma, R.grad),
        C.inner(S.grad, co.f),
        0.5 * C.frob(Sig, S.hess),
        -co.q,
    ]
    im = [
        0.5 * C.inner(co.div_sigma, S.grad),
        -C.inner(R.grad, co.f),
        -0.5 * co.div_f,
        0.5 * wlapR,
        C.quad(R.grad, Sig, R.grad),
        (0.25 - 0.5 * R.value) * co.ddiv_sigma,
    ]
    return _assemble(re, im, "caSB_one")


def v_sb(R: Jet, S: Jet) -> PotentialField:
    """Classical bridge potential (``f = 0``, ``g = sigma = I``, ``q = 0``)."""
    gr2 = C.inner(R.grad, R.grad)
    re = [0.5 * R.lap, 0.5 * gr2, 0.5 * S.lap]
    im = [0.5 * R.lap, gr2]
    return _assemble(re, im, "SB")


def bohm_potential(R: Jet) -> np.ndarray:
    """The scaled Bohm term ``Laplacian(R) / 4``."""
    return 0.25 * R.lap


def bohm_field(R: Jet) -> PotentialField:
    b = bohm_potential(R)
    return PotentialField(b.astype(complex), "bohm_real", float(np.max(np.abs(b), initial=0.0)))
