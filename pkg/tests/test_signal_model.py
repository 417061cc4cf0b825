import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gauss_legendre, mp_signal
from siftem.errors import QuadratureError
from siftem.signal_model import (
    BandlimitedSignal,
    SincKernel,
    antiderivative,
    generate_signal,
    integral_closed_form,
    integrate,
)

W = 200 * np.pi


def unit_pulse(M=12, m=0):
    c = np.zeros(2 * M + 1)
    c[m] = 1.0
    return BandlimitedSignal(c, W)


def test_generate_shape_and_spacing():
    s = generate_signal(12, W, seed=1)
    assert s.coeffs.size == 25
    assert s.pulse_spacing == pytest.approx(0.01, rel=1e-15)
    assert s.recovery_nyquist == pytest.approx(0.005, rel=1e-15)
    assert s.occupied_band == pytest.approx(100 * np.pi, rel=1e-15)
    assert np.all(np.abs(s.coeffs) <= 1)


def test_zero_coefficients():
    s = BandlimitedSignal(np.zeros(25), W)
    assert s.amplitude_bound == 0.0
    assert np.all(s(np.linspace(-0.04, 0.28, 101)) == 0.0)


def test_unit_pulse_values():
    s = unit_pulse()
    T = s.pulse_spacing
    assert s(0.0) == 1.0
    assert np.allclose(s(T * np.arange(1, 25)), 0.0, atol=1e-15)
    assert s(T / 2) == pytest.approx(2 / np.pi, rel=1e-15)


def test_matches_extended_precision_sum():
    s = generate_signal(12, W, seed=7)
    t = np.random.default_rng(0).uniform(*s.window, 50)
    ref = np.array([mp_signal(s.coeffs, s.pulse_spacing, x) for x in t])
    got = s(t)
    scale = np.maximum(np.abs(ref), 1e-3)
    assert np.max(np.abs(got - ref) / scale) <= 1e-13


def test_interpolation_property():
    s = generate_signal(12, W, seed=3)
    assert np.allclose(s(s.centers), s.coeffs, rtol=1e-13, atol=1e-15)


def test_amplitude_bound_is_a_max():
    s = generate_signal(12, W, seed=11)
    t = np.linspace(*s.window, 200_001)
    dense = np.max(np.abs(s(t)))
    assert dense <= s.amplitude_bound * (1 + 1e-12)
    assert s.amplitude_bound - dense < 1e-9
    assert s.amplitude_bound <= s.analytic_bound


def test_integrate_zero_signal():
    s = BandlimitedSignal(np.zeros(25), W)
    assert integrate(s, 0.0, 0.1) == 0.0


def test_integral_of_unit_pulse_tends_to_spacing():
    s = unit_pulse(M=1)
    T = s.pulse_spacing
    for L in (10, 100, 1000):
        assert abs(integral_closed_form(s, -L * T, L * T) - T) < T / L


def test_integrate_against_gauss_legendre():
    s = generate_signal(12, W, seed=5)
    ref = gauss_legendre(s, 0.1, 0.13, panels=200)
    assert abs(integrate(s, 0.1, 0.13) - ref) <= 1e-10
    assert abs(integral_closed_form(s, 0.1, 0.13) - ref) <= 1e-12


def test_antiderivative_difference_matches_closed_form():
    s = generate_signal(12, W, seed=5)
    a, b = 0.02, 0.071
    assert antiderivative(s, b) - antiderivative(s, a) == pytest.approx(
        integral_closed_form(s, a, b), abs=1e-15)


def test_integrate_depth_limit():
    s = generate_signal(12, W, seed=5)
    with pytest.raises(QuadratureError):
        integrate(s, 0.0, 0.2, tol=1e-30, max_depth=3)


def test_json_round_trip():
    s = generate_signal(12, W, seed=99)
    d = json.loads(s.to_json())
    assert d["rng"]["algorithm"] == "numpy.random.PCG64"
    back = BandlimitedSignal.from_json(s.to_json())
    assert np.array_equal(back.coeffs, s.coeffs)
    assert back.seed == 99 and back.omega_M == s.omega_M


def test_seed_reproducible():
    a = generate_signal(12, W, seed=42)
    b = generate_signal(12, W, seed=42)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_sinc_kernel():
    g = SincKernel(100 * np.pi)
    assert g(0.0) == pytest.approx(100.0)
    assert g.integral(-1e3, 1e3) == pytest.approx(1.0, abs=1e-5)
    ref = gauss_legendre(g, 0.001, 0.004, panels=50)
    assert g.integral(0.001, 0.004) == pytest.approx(ref, abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), u=st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_quadrature_additivity(seed, u):
    s = generate_signal(12, W, seed=seed)
    lo, hi = 0.0, 0.2
    a, b, c = sorted(lo + (hi - lo) * np.array(u))
    tol = 1e-12
    whole = integrate(s, a, c, tol)
    parts = integrate(s, a, b, tol) + integrate(s, b, c, tol)
    assert abs(whole - parts) <= 2 * 3 * tol * (1 + abs(whole))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.01, 100))
def test_amplitude_bound_homogeneous(seed, lam):
    s = generate_signal(12, W, seed=seed)
    assert s.scaled(lam).amplitude_bound == pytest.approx(lam * s.amplitude_bound, rel=1e-9)
