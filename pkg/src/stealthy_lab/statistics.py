"""Linear statistics, anticoncentration audits, holes and variance decay.

Linear statistics on the torus:

* fields: ``I(phi) = sum_x phi(x) xi(x) h^d`` over sites (``h`` the lattice
  spacing), with ``Var I = n^{-d} sum_k |phi_hat(k)|^2 S(k)``;
* points: ``I(phi) = sum_j phi_per(X_j)`` with ``phi`` periodized over the box.
"""

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import comb, zeta

from .errors import CertificateError, ResolutionError
from .gaussian import FieldRealization
from .lattice import TorusGeometry
from .points import PointConfiguration, collective_coordinates
from .structure import gap_radius
from .testfunctions import TestFunction


def _field_weights(test, geometry):
    if isinstance(test, TestFunction):
        return test.on_torus(geometry)
    return geometry.as_lattice_array(test)


def linear_statistic(test, target):
    """``I(phi)`` for a field realization (or raw site array with ``geometry=``) or a point set."""
    if isinstance(target, PointConfiguration):
        if target.N == 0:
            return 0j
        return complex(np.sum(test.periodized(target.points, target.box_length)))
    if isinstance(target, FieldRealization):
        g = target.geometry
        w = _field_weights(test, g)
        return complex(np.sum(w * target.values) * g.cell_volume)
    raise TypeError("target must be a FieldRealization or PointConfiguration")


def field_statistics(test, fields, geometry):
    """``I(phi)`` for a stack of field arrays of shape ``(M,) + geometry.shape``."""
    w = _field_weights(test, geometry).ravel()
    X = np.asarray(fields).reshape(-1, geometry.size)
    return (X @ w) * geometry.cell_volume


def expected_statistic(test, rho):
    """``rho * phi_hat(0)``, the mean of ``I(phi)`` at intensity ``rho``."""
    return rho * complex(test.hat0)


class StatisticCheck(NamedTuple):
    value: complex
    expected: complex
    deviation: float
    tolerance: float


def stationarity_check(test, cfg):
    """``I(phi)`` against ``rho phi_hat(0)`` with a tolerance from the energy certificate.

    On the torus ``I(phi) - rho phi_hat(0) = L^{-d} sum_{k != 0} phi_hat(k) conj(rho_tilde(k))``,
    so the deviation is bounded by ``L^{-d} sum |phi_hat(k)| |rho_tilde(k)|`` over the
    nonzero modes where ``phi_hat`` lives; a small floor covers quadrature error.
    """
    if not cfg.certified:
        raise CertificateError("configuration carries no stealthy energy certificate")
    L, d = cfg.box_length, cfg.d
    value = linear_statistic(test, cfg)
    expected = expected_statistic(test, cfg.rho)
    geom = cfg.gap.geometry
    k = geom.wavevectors.reshape(-1, d)
    hat = np.abs(test.fourier(k))
    keep = hat > 0
    keep[0] = False
    rho_k = np.abs(collective_coordinates(cfg.points, k[keep]))
    tol = float(np.sum(hat[keep] * rho_k)) / L ** d + 1e-12 * abs(expected)
    return StatisticCheck(value, expected, float(abs(value - expected)), tol)


def variance_of_linear_statistic(test, S):
    g = S.geometry
    hat = test.hat_on_torus(g) if isinstance(test, TestFunction) else \
        g.cell_volume * np.fft.fftn(g.as_lattice_array(test))
    return float(np.sum(np.abs(hat) ** 2 * S.values) / g.size)


def empirical_variance(test, ensemble, geometry=None):
    """Sample variance of ``I(phi)`` over an ensemble of fields (array or realizations)."""
    if geometry is None:
        geometry = ensemble[0].geometry
    X = np.asarray([getattr(f, "values", f) for f in ensemble])
    vals = field_statistics(test, X, geometry)
    return float(np.var(vals, ddof=1).real) if vals.size > 1 else 0.0


# ---------------------------------------------------------------- anticoncentration

class AuditResult(NamedTuple):
    max_count: int
    bound: float
    passed: bool
    side: float
    pitch: float
    centers: int


def _cube_counts(points, centers, side, L):
    """Points (with periodic images) in closed cubes of ``side`` at each center."""
    counts = np.ones((centers.shape[0], points.shape[0]), dtype=np.int64)
    h = side / 2
    for i in range(points.shape[1]):
        c = centers[:, i][:, None]
        x = points[:, i][None, :]
        hi = np.floor((c + h - x) / L)
        lo = np.ceil((c - h - x) / L)
        counts *= np.maximum(hi - lo + 1, 0).astype(np.int64)
    return counts.sum(axis=1)


def anticoncentration_audit(cfg, b, pair, pitch_fraction=1 / 8, chunk=4096):
    """Slide the side-``a/b`` cube over a grid of centers and compare the largest
    count with ``(psi_hat*psi_hat)(0) rho b^-d``."""
    d = cfg.d
    side = pair.a / b
    L = cfg.box_length
    bound = pair.autocorr0 * cfg.rho * b ** (-d)
    if cfg.N == 0:
        return AuditResult(0, bound, True, side, 0.0, 0)
    if not cfg.certified:
        raise CertificateError("configuration carries no stealthy energy certificate")
    if gap_radius(cfg.gap) < b:
        raise CertificateError(f"certified gap radius {gap_radius(cfg.gap):.6g} is below b = {b}")
    per_axis = max(int(np.ceil(L / (side * pitch_fraction))), 1)
    pitch = L / per_axis
    axis = np.arange(per_axis) * pitch
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    # anchor the grid at a point so the audit commutes with translations
    centers = (np.stack([g.ravel() for g in grids], axis=1) + cfg.points[0]) % L
    best = 0
    for i in range(0, centers.shape[0], chunk):
        best = max(best, int(_cube_counts(cfg.points, centers[i:i + chunk], side, L).max()))
    # also center cubes on the points themselves, where counts peak
    best = max(best, int(_cube_counts(cfg.points, cfg.points, side, L).max()))
    return AuditResult(best, float(bound), bool(best <= bound), side, pitch, centers.shape[0])


# ---------------------------------------------------------------- holes

@dataclass(frozen=True)
class HoleReport:
    radius: float
    center: tuple
    norm_kind: str
    approximate: bool

    def to_dict(self):
        return asdict(self)


def _periodic_dist(points, centers, L, kind):
    diff = np.abs(centers[:, None, :] - points[None, :, :]) % L
    diff = np.minimum(diff, L - diff)
    if kind == "linf":
        return diff.max(axis=-1)
    return np.sqrt((diff ** 2).sum(axis=-1))


def find_largest_hole(cfg, resolution=None, chunk=2048):
    """Largest empty region of the configuration.

    d = 1: exact, half the largest circular gap (Euclidean radius).  d >= 2: grid
    search with pitch ``box_length / (8 * resolution)`` returning the largest empty
    L-infinity cube half-side found, a lower bound on the true hole size.
    """
    if cfg.N == 0:
        raise ValueError("hole search needs at least one point")
    L = cfg.box_length
    if cfg.d == 1:
        x = np.sort(cfg.points[:, 0])
        gaps = np.diff(np.concatenate([x, [x[0] + L]]))
        # ties go to the last gap in sorted order
        i = gaps.size - 1 - int(np.argmax(gaps[::-1]))
        center = (x[i] + gaps[i] / 2) % L
        return HoleReport(float(gaps[i] / 2), (float(center),), "euclidean", False)
    if resolution is None:
        resolution = int(np.ceil(cfg.N ** (1 / cfg.d)))
    per_axis = 8 * int(resolution)
    axis = (np.arange(per_axis) + 0.5) * (L / per_axis)
    grids = np.meshgrid(*([axis] * cfg.d), indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    best_r, best_c = -1.0, None
    for i in range(0, centers.shape[0], chunk):
        c = centers[i:i + chunk]
        r = _periodic_dist(cfg.points, c, L, "linf").min(axis=1)
        j = int(np.argmax(r))
        if r[j] > best_r:
            best_r, best_c = float(r[j]), c[j]
    return HoleReport(best_r, tuple(float(v) for v in best_c), "linf", True)


def verify_hole(cfg, report, rtol=1e-12):
    """True if the reported open region contains no point of the configuration."""
    c = np.asarray(report.center, dtype=float).reshape(1, cfg.d)
    kind = "linf" if report.norm_kind == "linf" else "euclidean"
    dist = _periodic_dist(cfg.points, c, cfg.box_length, kind)
    return bool(np.all(dist >= report.radius * (1 - rtol)))


@dataclass(frozen=True)
class HoleBound:
    """Explicit constants of the no-large-hole argument.

    A cube of side ``theta_side = a/b`` holds at most ``autocorr0 * rho * b^-d``
    points, and ``phi_b(x) <= C_psi b^-1 |x|^-(d+1)``.  Summing the contributions of
    the L-infinity shells of side-``theta_side`` cubes around an empty cube of
    half-side ``R theta_side`` gives ``I(phi) <= rho phi_hat(0) C_psi a^-(d+1) T(R)``
    with ``T(R) = sum_{m >= R} ((2m+2)^d - (2m)^d) m^-(d+1)``.  Since
    ``I(phi) = rho phi_hat(0)``, such a hole forces ``C_psi a^-(d+1) T(R) >= 1``.
    ``R_star`` is the first integer where that fails; ``r0`` bounds the Euclidean radius.
    """

    d: int
    b: float
    a: float
    theta_side: float
    decay_constant: float
    autocorr0: float
    R_star: int
    tail_at_R: float
    cube_halfside: float
    r0: float
    kappa: float
    rho_factor_cancels: bool = True
    chain: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def shell_cube_count(m, d):
    """Side-theta cubes in the L-infinity shell between ``m theta`` and ``(m+1) theta``."""
    return (2 * m + 2) ** d - (2 * m) ** d


def shell_tail(R, d):
    """``sum_{m >= R} ((2m+2)^d - (2m)^d) m^-(d+1)`` via Hurwitz zeta."""
    # (2m+2)^d - (2m)^d = 2^d sum_{i<d} C(d,i) m^i
    return float(2 ** d * sum(comb(d, i, exact=True) * zeta(d + 1 - i, R) for i in range(d)))


def hole_bound(b, d, pair, rho=1.0, max_R=10 ** 7):
    if not b > 0:
        raise ValueError("b must be positive")
    if pair.d != d:
        raise ValueError("bump pair dimension does not match d")
    C = pair.decay_constant
    a = pair.a
    pref = C * a ** (-(d + 1))
    # T is decreasing in R; bisect for the first R with pref * T(R) < 1
    lo, hi = 1, 1
    while pref * shell_tail(hi, d) >= 1:
        lo, hi = hi, hi * 2
        if hi > max_R:
            raise ValueError("shell tail does not drop below one; constants too large")
    while lo < hi:
        mid = (lo + hi) // 2
        if pref * shell_tail(mid, d) < 1:
            hi = mid
        else:
            lo = mid + 1
    R = hi
    theta = a / b
    chain = [
        {"step": "cube side theta = a / b", "value": theta},
        {"step": "points per side-theta cube <= autocorr0 * rho * b^-d",
         "value": pair.autocorr0 * rho * b ** (-d)},
        {"step": "phi_b(x) <= C_psi / b * |x|^-(d+1), C_psi", "value": C},
        {"step": "C_psi * a^-(d+1)", "value": pref},
        {"step": "T(R_star)", "value": shell_tail(R, d)},
        {"step": "T(R_star - 1)", "value": shell_tail(R - 1, d) if R > 1 else None},
    ]
    halfside = R * theta
    r0 = np.sqrt(d) * halfside
    return HoleBound(d, float(b), a, theta, C, pair.autocorr0, int(R),
                     shell_tail(R, d), float(halfside), float(r0), float(r0 * b), True, chain)


# ---------------------------------------------------------------- variance decay

@dataclass(frozen=True)
class DecayFit:
    scales: list
    variances: list
    slope: float
    intercept: float
    residual: float
    degenerate: bool

    def to_dict(self):
        return asdict(self)


def scaled_window_variance(S, window, L):
    """Analytic ``Var sum_x w(x/L) xi(x) h^d`` via the mode sum."""
    g = S.geometry
    vals = window(g.centered_positions / L)
    hat = g.cell_volume * np.fft.fftn(vals)
    return float(np.sum(np.abs(hat) ** 2 * S.values) / g.size)


def variance_decay_fit(S, window, scales, support_radius=None, zero_rtol=1e-28):
    """Log-log slope of the window variance over ``scales``.

    ``window`` is evaluated at ``x / L`` on the minimum-image site coordinates;
    ``support_radius`` (of the unscaled window) determines which ``L`` fit the box.
    """
    g = S.geometry
    scales = [float(L) for L in scales]
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be increasing")
    limit = g.box_length / 4
    usable = [L for L in scales if L <= limit and
              (support_radius is None or 2 * support_radius * L <= g.box_length)]
    if len(usable) < 3:
        raise ResolutionError(f"need at least 3 resolvable scales (L <= {limit:g}), got {len(usable)}")
    if isinstance(window, TestFunction) and window.compact_spectrum:
        # gap-supported windows: use the exact transform of w(x/L), L^d w_hat(L k)
        var = []
        for L in usable:
            hat = L ** g.d * window.fourier(L * g.wavevectors)
            var.append(float(np.sum(np.abs(hat) ** 2 * S.values) / g.size))
    else:
        var = [scaled_window_variance(S, window, L) for L in usable]
    var = np.asarray(var)
    scale_ref = max(float(np.max(np.abs(window(g.centered_positions / usable[0])))), 1.0)
    if np.all(var <= zero_rtol * scale_ref ** 2):
        return DecayFit(usable, var.tolist(), float("-inf"), float("nan"), 0.0, True)
    if np.any(var <= 0):
        raise ValueError("variance vanishes at some scales but not all; slope undefined")
    coef, res, *_ = np.polyfit(np.log(usable), np.log(var), 1, full=True)
    residual = float(np.sqrt(res[0] / len(usable))) if res.size else 0.0
    return DecayFit(usable, var.tolist(), float(coef[0]), float(coef[1]), residual, False)


