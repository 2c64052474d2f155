import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad, trapezoid

from stealthy_lab.errors import SupportError
from stealthy_lab.lattice import TorusGeometry
from stealthy_lab.structure import GapRegion
from stealthy_lab.testfunctions import (PSI_SUPPORT, anticonc_phi, mollifier, monomial_window,
                                        rigidity_phi)


def test_psi0_matches_quadrature(pair1):
    val, _ = quad(lambda t: pair1.scale * mollifier(np.array([t]))[0], -1 / 3, 1 / 3,
                  epsabs=1e-14, epsrel=1e-13, limit=200)
    assert pair1.psi0 == pytest.approx(val / (2 * np.pi), rel=1e-8)
    assert float(pair1.psi(0.0)) == pytest.approx(pair1.psi0, rel=1e-8)


def test_autocorr_at_zero_is_l2_norm(pair1):
    # wave-space convolution carries dxi / (2 pi)^d, so (psi_hat*psi_hat)(0) = ||psi_hat||^2 / 2 pi
    val, _ = quad(lambda t: (pair1.scale * mollifier(np.array([t]))[0]) ** 2, -1 / 3, 1 / 3,
                  epsabs=1e-14, epsrel=1e-13, limit=200)
    assert float(pair1.autocorr(0.0)) == pytest.approx(val / (2 * np.pi), rel=1e-8)
    assert pair1.autocorr0 == pytest.approx(val / (2 * np.pi), rel=1e-8)


def test_autocorr0_is_int_psi_squared(pair1):
    x = np.linspace(-1500, 1500, 150001)
    assert trapezoid(pair1.psi(x) ** 2, x) == pytest.approx(pair1.autocorr0, rel=1e-8)


def test_autocorr_l1_equals_psi0_squared(pair1):
    # psi_hat >= 0, so ||psi_hat*psi_hat||_1 = ((2 pi)^-1 int psi_hat)^2 = psi(0)^2
    assert pair1.autocorr_l1 == pytest.approx(pair1.psi0 ** 2, rel=1e-10)


def test_psi_hat_support(pair1):
    xi = np.random.default_rng(0).uniform(1 / 3, 5, 1000)
    assert np.all(pair1.psi_hat(xi) == 0)
    assert np.all(pair1.psi_hat(-xi) == 0)


def test_psi_at_least_one_on_cube(pair1):
    x = np.linspace(-pair1.a / 2, pair1.a / 2, 2001)
    assert np.min(pair1.psi(x)) >= 1 - 1e-9


def test_anticonc_at_origin(pair1):
    phi = anticonc_phi(pair1, 1.0)
    assert float(phi(0.0)) == pytest.approx(pair1.psi0 ** 2, rel=1e-12)


def test_anticonc_scaling_identity(pair1):
    x = np.random.default_rng(1).uniform(-30, 30, 100)
    one = anticonc_phi(pair1, 1.0)
    for b in (0.3, 2.5):
        phib = anticonc_phi(pair1, b)
        assert np.allclose(phib(x), b * one(b * x), rtol=1e-12, atol=0)


def test_anticonc_dense_transform_support(pair1):
    g = TorusGeometry(1, 4096, 512.0)
    rel, ok = anticonc_phi(pair1, 1.0).support_certificate(g)
    assert ok, rel


def test_anticonc_nonnegative_and_lower_bound(pair1):
    for b in (0.5, 1.0, 3.0):
        phi = anticonc_phi(pair1, b)
        x = np.random.default_rng(2).uniform(-200 / b, 200 / b, 10 ** 4)
        assert np.all(phi(x) >= 0)
        cube = np.linspace(-phi.cube_side / 2, phi.cube_side / 2, 501)
        assert np.min(phi(cube)) >= b * (1 - 1e-9)


def test_anticonc_hat0_and_support(pair1):
    phi = anticonc_phi(pair1, 2.0)
    assert float(phi.fourier(0.0)) == pytest.approx(phi.hat0, rel=1e-10)
    k = np.linspace(2 * PSI_SUPPORT * 2.0 + 1e-9, 10, 50)
    assert np.all(phi.fourier(k) == 0)


def test_anticonc_decay_bound(pair1):
    for b in (0.5, 1.0, 4.0):
        phi = anticonc_phi(pair1, b)
        x = np.linspace(5, 400, 2000) / b
        assert np.all(phi(x) <= phi.decay_constant * x ** -2.0 * (1 + 1e-9))


def test_rigidity_examples():
    phi = rigidity_phi([0.0], [0.0], 1.0)
    assert phi(0.0) == pytest.approx(phi.constant)
    assert phi.constant == pytest.approx(1 / np.pi)
    assert abs(rigidity_phi([0.0], [0.0], np.pi)(1.0)) < 1e-30 + 1e-16
    phi2 = rigidity_phi([0.0, 0.0], [0.0, 0.0], 1.0)
    assert phi2([0.0, 0.0]) == pytest.approx(phi2.constant)


def test_rigidity_fourier_peak_is_one():
    phi = rigidity_phi([0.5], [0.1], 0.2)
    assert phi.fourier(0.6) == pytest.approx(1.0)
    assert phi.fourier(0.6 + 0.4) == 0.0


def test_rigidity_dense_transform_support():
    g = TorusGeometry(1, 512, 64.0)
    phi = rigidity_phi([0.5], [0.1], 0.2)
    rel, ok = phi.support_certificate(g, rtol=1e-8)
    assert ok, rel


def test_rigidity_periodization_against_image_sum():
    # Fejer closed form vs brute-force image sum of the sinc^2 evaluator
    L = 32.0
    beta = np.pi * 4 / L
    phi = rigidity_phi([2 * np.pi * 3 / L], [0.0], beta)
    x = np.linspace(-L / 2, L / 2, 17)
    brute = sum(phi(x + m * L) for m in range(-20000, 20001))
    assert np.allclose(phi.periodized(x, L), brute, atol=2e-6)


def test_rigidity_support_violation():
    g = TorusGeometry(1, 64, 64.0)
    gap = GapRegion.ball(g, 0.5)
    rigidity_phi([0.0], [0.0], 0.1, gap=gap)
    with pytest.raises(SupportError):
        rigidity_phi([0.0], [0.2], 0.2, gap=gap)


@given(x=st.floats(-5, 5), th=st.floats(-1, 1), dth=st.floats(-1e-3, 1e-3),
       beta=st.floats(0.05, 2), dbeta=st.floats(-1e-3, 1e-3))
def test_rigidity_jointly_continuous(x, th, dth, beta, dbeta):
    a = rigidity_phi([0.0], [th], beta)(x)
    b = rigidity_phi([0.0], [th + dth], beta + dbeta)(x)
    lip = 2 * (1 + abs(x)) * (1 + beta)
    assert abs(a - b) <= lip * (abs(dth) + abs(dbeta)) + 1e-15


def test_rigidity_beta_to_zero_is_character():
    x = np.linspace(-3, 3, 11)
    phi = rigidity_phi([0.4], [0.1], 1e-6, normalized=False)
    assert np.allclose(phi(x), np.exp(1j * 0.5 * x), atol=1e-10)


def test_monomial_window_examples():
    for L in (1.0, 3.0, 17.0):
        w0 = monomial_window((0,), L, 1.0)
        assert np.allclose(w0(np.linspace(-1, 1, 21)), 1.0)
        assert monomial_window((2,), L, 1.0)(0.5) == pytest.approx(0.25, abs=1e-15)
    w2 = monomial_window((1, 2), 4.0, 1.0)
    assert w2([0.5, -0.5]) == pytest.approx(0.125)


def test_monomial_window_definition():
    rng = np.random.default_rng(5)
    w = monomial_window((1,), 8.0, 1.0)
    x = rng.uniform(-20, 20, 100)
    assert np.allclose(w(x), x * w.base(x / 8.0), rtol=1e-14, atol=0)
    assert np.all(w(np.array([16.0 + 1e-9, -30.0])) == 0)


def test_monomial_window_rejects_small_L():
    with pytest.raises(ValueError):
        monomial_window((1,), 0.5, 1.0)
