import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import zeta

from stealthy_lab.errors import CertificateError, ResolutionError
from stealthy_lab.gaussian import GaussianSpec, sample_field, sample_field_array
from stealthy_lab.lattice import TorusGeometry
from stealthy_lab.points import (PointConfiguration, ball_gap, generate_stealthy,
                                 lattice_configuration)
from stealthy_lab.statistics import (anticoncentration_audit, empirical_variance,
                                     find_largest_hole, hole_bound, linear_statistic,
                                     shell_cube_count, shell_tail, stationarity_check,
                                     variance_decay_fit, variance_of_linear_statistic,
                                     verify_hole)
from stealthy_lab.structure import (GapRegion, StructureFunction, fast_decay, power_law,
                                    stealthy_flat)
from stealthy_lab.testfunctions import TestFunction, anticonc_phi


class _Zero(TestFunction):
    d = 1
    reach = 1.0

    def __call__(self, x):
        return np.zeros(self._as_points(x).shape[:-1])


@pytest.fixture(scope="module")
def stealthy_cfg():
    return generate_stealthy(64, 1, 32.0, ball_gap(1, 32.0, 0.5), seed=12)


def test_zero_test_function():
    cfg = PointConfiguration(1, 10.0, [[1.0], [2.0]])
    assert linear_statistic(_Zero(), cfg) == 0
    g = TorusGeometry(1, 8, 8.0)
    f = sample_field(GaussianSpec(stealthy_flat(g, 1.0)), 1)[0]
    assert linear_statistic(_Zero(), f) == 0


def test_lattice_sum_equals_hat0(pair1):
    cfg = PointConfiguration(1, 64.0, lattice_configuration(1, 64, 64.0))
    phi = anticonc_phi(pair1, 1.0)
    assert linear_statistic(phi, cfg).real == pytest.approx(phi.hat0, rel=1e-8)


def test_stealthy_statistic_matches_mean(pair1, stealthy_cfg):
    phi = anticonc_phi(pair1, 0.5)
    chk = stationarity_check(phi, stealthy_cfg)
    assert chk.deviation <= 1e-8 * abs(chk.expected)
    assert chk.deviation <= chk.tolerance


def test_stationarity_requires_certificate(pair1):
    cfg = PointConfiguration(1, 10.0, [[1.0]])
    with pytest.raises(CertificateError):
        stationarity_check(anticonc_phi(pair1, 0.5), cfg)


def test_gap_supported_variance_is_zero(pair1):
    g = TorusGeometry(1, 256, 256.0)
    assert variance_of_linear_statistic(anticonc_phi(pair1, 1.0), stealthy_flat(g, 1.0)) == 0.0


def test_delta_variance_equals_site_variance():
    g = TorusGeometry(1, 16, 16.0)
    S = StructureFunction(g, np.ones(16), GapRegion.empty(g))
    delta = np.eye(16)[3]
    assert variance_of_linear_statistic(delta, S) == pytest.approx(1.0, rel=1e-12)


def test_empirical_variance_monte_carlo():
    g = TorusGeometry(1, 64, 64.0)
    S = stealthy_flat(g, 0.5)
    w = np.random.default_rng(3).normal(size=64)
    X = sample_field_array(GaussianSpec(S, 17), 5000)
    analytic = variance_of_linear_statistic(w, S)
    assert abs(empirical_variance(w, X, g) - analytic) <= 0.1 * analytic


def test_audit_lattice(pair1):
    g = TorusGeometry(1, 128, 64.0)
    b = 2 * np.pi - 1e-6
    gap = GapRegion.ball(g, b)
    pts = lattice_configuration(1, 64, 64.0)
    from stealthy_lab.points import energy
    cfg = PointConfiguration(1, 64.0, pts, gap, energy(pts, g.wavevectors[gap.nonzero_mask]))
    res = anticoncentration_audit(cfg, b, pair1)
    assert res.max_count <= np.ceil(pair1.a / b) + 1
    assert res.bound > res.max_count and res.passed


def test_audit_empty(pair1):
    res = anticoncentration_audit(PointConfiguration(1, 8.0, np.zeros((0, 1))), 0.5, pair1)
    assert res.max_count == 0 and res.passed


def test_audit_refuses_uncertified(pair1):
    with pytest.raises(CertificateError):
        anticoncentration_audit(PointConfiguration(1, 8.0, [[1.0]]), 0.5, pair1)


def test_audit_passes_generated(pair1, stealthy_cfg):
    assert anticoncentration_audit(stealthy_cfg, 0.5, pair1).passed


@given(shift=st.floats(-100, 100))
def test_audit_translation_robust(pair1, stealthy_cfg, shift):
    r0 = anticoncentration_audit(stealthy_cfg, 0.5, pair1)
    r1 = anticoncentration_audit(stealthy_cfg.translated([shift]), 0.5, pair1)
    assert (r0.max_count, r0.passed) == (r1.max_count, r1.passed)


def test_hole_examples():
    rep = find_largest_hole(PointConfiguration(1, 8.0, [[0], [1], [2], [5]]))
    assert rep.radius == pytest.approx(1.5) and rep.center[0] == pytest.approx(6.5)
    assert find_largest_hole(PointConfiguration(1, 16.0, lattice_configuration(1, 16, 16.0))).radius \
        == pytest.approx(0.5)


def _brute_hole(x, L):
    best = 0.0
    for i in range(len(x)):
        nxt = min(((x[j] - x[i]) % L or L) for j in range(len(x)))
        best = max(best, nxt / 2)
    return best


@given(seed=st.integers(0, 10 ** 6), N=st.integers(1, 100))
def test_hole_d1_matches_brute_force(seed, N):
    rng = np.random.default_rng(seed)
    L = float(rng.uniform(1, 50))
    x = rng.uniform(0, L, N)
    rep = find_largest_hole(PointConfiguration(1, L, x[:, None]))
    assert rep.radius == pytest.approx(_brute_hole(x, L), rel=1e-12, abs=1e-12)


def test_hole_d2_verifies():
    rng = np.random.default_rng(9)
    cfg = PointConfiguration(2, 8.0, rng.uniform(0, 8, (64, 2)))
    rep = find_largest_hole(cfg)
    assert rep.approximate and verify_hole(cfg, rep)
    # any hand-checked empty cube is no larger than the reported one
    for c in rng.uniform(0, 8, (50, 2)):
        d = np.abs(cfg.points - c) % 8
        r = np.min(np.max(np.minimum(d, 8 - d), axis=1))
        assert r <= rep.radius + 8 / (8 * 8)


def test_shell_tail_against_direct_sum():
    for d in (1, 2, 3):
        for R in (1, 2, 5):
            m = np.arange(R, 200001, dtype=float)
            direct = np.sum(shell_cube_count(m, d) * m ** -(d + 1.0))
            # remainder beyond the cutoff ~ 2^d d * M^-1 / 1
            assert shell_tail(R, d) == pytest.approx(direct, rel=1e-4)
    assert shell_tail(3, 1) == pytest.approx(2 * zeta(2, 3))


def test_hole_bound_d1_reference(pair1):
    hb = hole_bound(1.0, 1, pair1)
    assert hb.R_star == 2
    assert hb.kappa == pytest.approx(2 * pair1.a, rel=1e-12)
    assert hb.kappa == pytest.approx(33.663747, rel=1e-6)
    pref = pair1.decay_constant * pair1.a ** -2
    assert pref * shell_tail(2, 1) < 1 <= pref * shell_tail(1, 1)


@given(b=st.floats(0.01, 100))
def test_hole_bound_inverse_law(pair1, b):
    assert hole_bound(b, 1, pair1).r0 * b == pytest.approx(hole_bound(1.0, 1, pair1).r0, rel=1e-12)
    assert hole_bound(2 * b, 1, pair1).r0 == pytest.approx(hole_bound(b, 1, pair1).r0 / 2, rel=1e-12)


def test_hole_bound_rho_free(pair1):
    vals = {hole_bound(0.7, 1, pair1, rho=r).r0 for r in (0.5, 1.0, 2.0)}
    assert len(vals) == 1


def test_decay_fit_degenerate_gap(pair1):
    g = TorusGeometry(1, 512, 512.0)
    fit = variance_decay_fit(stealthy_flat(g, 1.0), anticonc_phi(pair1, 4.0), [8, 16, 32, 64])
    assert fit.degenerate


def test_decay_fit_fast_decay_steep(pair1):
    g = TorusGeometry(1, 512, 512.0)
    fit = variance_decay_fit(fast_decay(g, 1.0), anticonc_phi(pair1, 4.0), [8, 16, 32, 64])
    assert not fit.degenerate and fit.slope <= -6


def test_decay_fit_power_law_control(pair1):
    g = TorusGeometry(1, 512, 512.0)
    fit = variance_decay_fit(power_law(g, 2.0), anticonc_phi(pair1, 4.0), [8, 16, 32, 64])
    assert -6 < fit.slope < 0


def test_decay_fit_needs_scales(pair1):
    g = TorusGeometry(1, 64, 64.0)
    with pytest.raises(ResolutionError):
        variance_decay_fit(fast_decay(g, 1.0), anticonc_phi(pair1, 4.0), [8, 16, 32, 64])
