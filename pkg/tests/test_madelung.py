import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbwave.fields import Grid
from sbwave.madelung import PhaseWrapWarning, WaveField, born_density, from_wave, recover_control, to_wave
from sbwave.synthetic import smooth_function

G = Grid.line(-3.0, 3.0, 64)
EYE = np.ones(G.shape + (1, 1))


def test_to_wave_examples():
    z = np.zeros(G.shape)
    assert np.all(to_wave(z, z, 1.0, G).psi == 1)
    lam = 0.7
    psi = to_wave(z, np.full(G.shape, lam * np.pi / 2), lam, G).psi
    assert np.allclose(psi, 1j, atol=1e-15)
    with pytest.raises(ValueError):
        to_wave(z, z, 0.0, G)
    with pytest.raises(ValueError):
        to_wave(z, z[:-1], 1.0, G)


def test_born_density_examples():
    rng = np.random.default_rng(0)
    R = smooth_function(G, rng) - 1.0
    S = 3 * smooth_function(G, rng)
    rho, imag = born_density(to_wave(R, S, 0.5, G))
    assert np.max(np.abs(rho / np.exp(2 * R) - 1)) <= 1e-12
    assert imag <= 1e-15 * np.max(rho)
    one, _ = born_density(WaveField(np.ones(G.shape), 1.0, G))
    assert np.all(one == 1)


def test_conjugate():
    w = to_wave(np.zeros(G.shape), G.axes()[0], 1.0, G)
    assert np.array_equal(w.conj, np.conj(w.psi))


def test_recover_linear_phase():
    x = G.axes()[0]
    u, imag = recover_control(to_wave(-x**2 / 4, 1.7 * x, 1.0, G), EYE)
    assert np.allclose(u, 1.7, atol=1e-12) and imag <= 1e-12
    u0, _ = recover_control(to_wave(-x**2 / 4, 1.7 * x, 1.0, G), 0 * EYE)
    assert np.all(u0 == 0)


def test_recover_matches_gradient_with_wrapping_phase():
    from sbwave import calculus as C

    x = G.axes()[0]
    S = 0.5 * x**2  # several turns over the box with lam = 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        u, _ = recover_control(to_wave(np.zeros_like(x), S, 0.5, G), EYE)
    ref = C.gradient(S, G)
    assert np.max(np.abs(u - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_unwrap_warning_on_coarse_phase():
    x = G.axes()[0]
    with pytest.warns(PhaseWrapWarning):
        to_wave(np.zeros_like(x), 40 * x**2, 1.0, G).phase()


def test_round_trip_2d():
    g = Grid.square(-2.0, 2.0, 40)
    rng = np.random.default_rng(3)
    R = smooth_function(g, rng) - 0.3 * np.sum(g.mesh() ** 2, -1)
    S = 4 * smooth_function(g, rng)
    R2, S2 = from_wave(to_wave(R, S, 0.8, g))
    assert np.max(np.abs(R2 - R)) <= 1e-10
    k = np.round((S2 - S) / (2 * np.pi * 0.8))
    assert np.max(np.abs(S2 - S - 2 * np.pi * 0.8 * k)) <= 1e-10
    assert np.all(k == k.flat[0])  # one constant shift over the whole grid


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_recover_control_property(seed, lam):
    from sbwave import calculus as C

    rng = np.random.default_rng(seed)
    R = smooth_function(G, rng) - 1.0
    S = 2 * smooth_function(G, rng)
    g = 0.5 + np.abs(smooth_function(G, rng))[..., None, None]
    u, imag = recover_control(to_wave(R, S, lam, G), g)
    ref = np.einsum("...ji,...j->...i", g, C.gradient(S, G))
    scale = max(np.max(np.abs(ref)), 1e-300)
    assert imag <= 1e-10 * scale
    assert np.max(np.abs(u - ref)) <= 1e-10 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_born_modulus_property(seed, lam):
    rng = np.random.default_rng(seed)
    R = 2 * smooth_function(G, rng)
    S = 5 * smooth_function(G, rng)
    rho, _ = born_density(to_wave(R, S, lam, G))
    assert np.all(rho >= 0)
    assert np.max(np.abs(rho / np.exp(2 * R) - 1)) <= 1e-12
