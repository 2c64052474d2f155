"""Gap-supported test functions and the universal constants built from them.

Fourier convention: ``f_hat(xi) = int f(x) exp(-i x.xi) dx`` and
``f(x) = int f_hat(xi) exp(i x.xi) dxi / (2 pi)^d``.  Convolution on the wave
space uses the same measure, ``(f*g)(xi) = int f(eta) g(xi - eta) deta / (2 pi)^d``,
so that ``FT(f g) = f_hat * g_hat`` holds without stray factors.  With these,
``E[I(phi)] = rho * phi_hat(0)`` and ``phi_hat(0) = int phi``.

The auxiliary bump is the standard mollifier
``psi_hat(xi) = c * exp(-1 / (1 - (3|xi|)^2))`` on ``|xi| < 1/3``.  The cube side
``a`` is the side of the cube whose corners sit on the half-maximum radius of
``psi``, and ``c`` is chosen so that ``psi >= 1`` on that cube.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import brentq
from scipy.special import gamma, jv, roots_legendre

from .errors import ConstructionError, SupportError
from .lattice import forward_dft

PSI_SUPPORT = 1.0 / 3.0


def mollifier(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < PSI_SUPPORT
    t = 1.0 - (3.0 * s[inside]) ** 2
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(-1.0 / t)
    return out


def mollifier_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < PSI_SUPPORT
    t = 1.0 - (3.0 * s[inside]) ** 2
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = np.exp(-1.0 / t) * (-18.0 * s[inside] / t ** 2)
    return out


def sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2 * np.pi ** (d / 2) / gamma(d / 2)


def _radial_kernel(z, d):
    """``z^(1-d/2) J_(d/2-1)(z)``, the radial Fourier kernel, finite at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    if d == 1:
        return np.sqrt(2 / np.pi) * np.cos(z)
    if d == 3:
        return np.sqrt(2 / np.pi) * np.sinc(z / np.pi)
    nu = d / 2 - 1
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    out[small] = 2.0 ** (-nu) / gamma(nu + 1)
    zz = z[~small]
    out[~small] = zz ** (-nu) * jv(nu, zz)
    return out


@dataclass(frozen=True, eq=False)
class BumpPair:
    """``psi_hat`` / ``psi`` pair with its certified constants.

    Attributes hold quantities in the module's Fourier convention:
    ``a`` (cube side with ``psi >= 1``), ``psi0 = psi(0)``,
    ``autocorr0 = (psi_hat*psi_hat)(0) = int psi^2``,
    ``autocorr_l1 = ||psi_hat*psi_hat||_1``,
    ``decay_norm = ||D^(d+1)(psi_hat*psi_hat)||_1`` and
    ``decay_sup = sup |x|^(d+1) psi(x)^2``.
    """

    d: int
    scale: float
    a: float
    psi0: float
    autocorr0: float
    autocorr_l1: float
    decay_norm: float
    decay_sup: float
    nodes: int
    cheb_degree: int
    _s: np.ndarray = field(repr=False, default=None)
    _w: np.ndarray = field(repr=False, default=None)
    _autocorr: object = field(repr=False, default=None)

    @property
    def decay_constant(self):
        """Constant ``C_psi`` with ``psi(x)^2 <= C_psi |x|^(-d-1)``; the larger of the two certificates."""
        return max(self.decay_norm, self.decay_sup)

    def psi_hat(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.abs(xi) if self.d == 1 and xi.ndim <= 1 else np.linalg.norm(np.atleast_1d(xi), axis=-1)
        return self.scale * mollifier(r)

    def psi_radial(self, r, chunk=4096):
        r = np.asarray(r, dtype=float)
        flat = r.ravel()
        out = np.empty_like(flat)
        weights = self._w * mollifier(self._s) * self._s ** (self.d - 1)
        pref = self.scale * (2 * np.pi) ** (-self.d / 2)
        for i in range(0, flat.size, chunk):
            z = np.outer(flat[i:i + chunk], self._s)
            out[i:i + chunk] = pref * (_radial_kernel(z, self.d) @ weights)
        return out.reshape(r.shape)

    def psi(self, x):
        """``psi`` at points ``x`` of shape ``(..., d)`` (or scalars when d = 1)."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            return self.psi_radial(np.abs(x))
        return self.psi_radial(np.linalg.norm(x, axis=-1))

    def autocorr(self, s):
        """Radial profile of ``psi_hat * psi_hat`` (zero beyond ``2/3``)."""
        s = np.abs(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = s < 2 * PSI_SUPPORT
        out[inside] = C.chebval(s[inside] / (2 * PSI_SUPPORT), self._autocorr)
        return out

    def autocorr_derivative(self, s, order):
        coef = C.chebder(self._autocorr, order) / (2 * PSI_SUPPORT) ** order
        s = np.abs(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = s < 2 * PSI_SUPPORT
        out[inside] = C.chebval(s[inside] / (2 * PSI_SUPPORT), coef)
        return out

    def constants(self):
        return {
            "d": self.d,
            "a": self.a,
            "psi_hat_scale": self.scale,
            "psi0": self.psi0,
            "autocorr0": self.autocorr0,
            "autocorr_l1": self.autocorr_l1,
            "decay_norm": self.decay_norm,
            "decay_sup": self.decay_sup,
            "quadrature_nodes": self.nodes,
            "chebyshev_degree": self.cheb_degree,
        }


def _autocorr_unscaled(s, d, nodes):
    """``(m*m)(s)`` for the unit mollifier ``m``, by direct quadrature."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x, w = roots_legendre(nodes)
    out = np.empty_like(s)
    if d == 1:
        for i, si in enumerate(s):
            lo, hi = max(-PSI_SUPPORT, si - PSI_SUPPORT), min(PSI_SUPPORT, si + PSI_SUPPORT)
            if hi <= lo:
                out[i] = 0.0
                continue
            eta = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            out[i] = 0.5 * (hi - lo) * np.sum(w * mollifier(eta) * mollifier(si - eta))
        return out / (2 * np.pi)
    # radial shells times the angle to the shift direction
    r = 0.5 * PSI_SUPPORT * (x + 1)
    wr = 0.5 * PSI_SUPPORT * w
    alpha = 0.5 * np.pi * (x + 1)
    wa = 0.5 * np.pi * w * np.sin(alpha) ** (d - 2)
    mr = mollifier(r) * r ** (d - 1) * wr
    for i, si in enumerate(s):
        dist = np.sqrt(np.maximum(r[:, None] ** 2 + si ** 2 - 2 * r[:, None] * si * np.cos(alpha), 0))
        out[i] = mr @ mollifier(dist) @ wa
    return out * sphere_area(d - 1) / (2 * np.pi) ** d


@lru_cache(maxsize=None)
def build_bump_pair(d, nodes=1024, cheb_degree=600):
    if d < 1:
        raise ValueError("d must be >= 1")
    s, w = roots_legendre(nodes)
    s = 0.5 * PSI_SUPPORT * (s + 1)
    w = 0.5 * PSI_SUPPORT * w
    raw = BumpPair(d, 1.0, 0, 0, 0, 0, 0, 0, nodes, cheb_degree, s, w, None)
    psi0_raw = float(raw.psi_radial(np.array([0.0]))[0])
    if not psi0_raw > 0:
        raise ConstructionError("psi(0) is not positive")
    try:
        r_half = brentq(lambda r: raw.psi_radial(np.array([r]))[0] - 0.5 * psi0_raw, 0.0, 60.0, xtol=1e-13)
    except ValueError as exc:
        raise ConstructionError("could not locate the half-maximum radius of psi") from exc
    grid = np.linspace(0.0, r_half, 2001)
    prof = raw.psi_radial(grid)
    if np.any(np.diff(prof) > 0) or prof.min() < prof[-1] * (1 - 1e-12):
        raise ConstructionError("psi is not certified decreasing on the cube")
    scale = 1.0 / prof[-1]
    a = 2.0 * r_half / np.sqrt(d)

    # psi_hat * psi_hat on [0, 2/3], Chebyshev in s / (2/3) as an even function
    cheb = C.chebinterpolate(
        lambda u: scale ** 2 * _autocorr_unscaled(np.abs(u) * 2 * PSI_SUPPORT, d, 256),
        cheb_degree,
    )
    cheb[1::2] = 0.0
    autocorr0 = scale ** 2 * sphere_area(d) / (2 * np.pi) ** d * float(
        np.sum(w * mollifier(s) ** 2 * s ** (d - 1)))
    psi0 = scale * psi0_raw

    t, tw = roots_legendre(4096)
    t = 0.5 * 2 * PSI_SUPPORT * (t + 1)
    tw = 0.5 * 2 * PSI_SUPPORT * tw
    radial = sphere_area(d) * t ** (d - 1) * tw / (2 * np.pi) ** d
    tmp = BumpPair(d, scale, a, psi0, autocorr0, 0, 0, 0, nodes, cheb_degree, s, w, cheb)
    l1 = float(np.sum(np.abs(tmp.autocorr(t)) * radial))
    dnorm = float(np.sum(np.abs(tmp.autocorr_derivative(t, d + 1)) * radial))
    r = np.linspace(0.0, 2000.0, 200001)
    dsup = float(np.max(r ** (d + 1) * tmp.psi_radial(r) ** 2))
    return BumpPair(d, scale, a, psi0, autocorr0, l1, dnorm, dsup, nodes, cheb_degree, s, w, cheb)


# ---------------------------------------------------------------- test functions

class TestFunction:
    """Evaluators of a test function in physical and wave space.

    ``reach`` is a radius beyond which the function is negligible (or zero);
    periodization sums images within it.
    """

    __test__ = False  # keep pytest from collecting this class
    d: int
    reach: float = np.inf

    def __call__(self, x):
        raise NotImplementedError

    def fourier(self, k):
        raise NotImplementedError

    def spectral_support(self, k):
        """Boolean mask of wavevectors inside the declared spectral support."""
        raise NotImplementedError

    def _as_points(self, x):
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return x

    def periodized(self, x, box_length):
        """``sum_m f(x + m L)`` over images within ``reach``."""
        x = self._as_points(x)
        L = box_length
        xc = (x + L / 2) % L - L / 2
        m = int(np.ceil(self.reach / L)) + 1
        shifts = np.arange(-m, m + 1) * L
        grids = np.meshgrid(*([shifts] * self.d), indexing="ij")
        shifts = np.stack([g.ravel() for g in grids], axis=1)
        total = np.zeros(xc.shape[:-1], dtype=complex)
        for sh in shifts:
            total = total + self(xc + sh)
        return total

    def on_torus(self, geometry):
        """Periodized values at the sites of ``geometry``."""
        return self.periodized(geometry.site_positions, geometry.box_length)

    compact_spectrum = False

    def sampled_hat(self, geometry):
        """Cell-volume weighted DFT of the periodized site values."""
        return geometry.cell_volume * forward_dft(self.on_torus(geometry), geometry)

    def hat_on_torus(self, geometry):
        """Transform of the lattice linear statistic on the modes.

        When ``phi_hat`` is compactly supported inside the Nyquist cell there is
        no aliasing and the closed form is exact; otherwise the sampled DFT is used.
        """
        if self.compact_spectrum and self._fits_nyquist(geometry):
            return self.fourier(geometry.wavevectors).astype(complex)
        return self.sampled_hat(geometry)

    def _fits_nyquist(self, geometry):
        return False

    def support_certificate(self, geometry, rtol=1e-10):
        """Max ``|phi_hat|`` outside the declared support, relative to the global max."""
        hat = np.abs(self.sampled_hat(geometry))
        outside = ~self.spectral_support(geometry.wavevectors)
        worst = float(hat[outside].max()) if np.any(outside) else 0.0
        rel = worst / float(hat.max())
        return rel, rel <= rtol


@dataclass(frozen=True, eq=False)
class AnticoncPhi(TestFunction):
    """``phi(x) = b^d psi(b x)^2``; ``phi_hat(xi) = (psi_hat*psi_hat)(xi / b)``."""

    pair: BumpPair
    b: float
    tail_rtol: float = 1e-18

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")

    @property
    def d(self):
        return self.pair.d

    @property
    def reach(self):
        # psi^2 <= C r^-(d+1) is far too loose; use the actual profile decay
        return _anticonc_reach(self.pair.d, self.tail_rtol) / self.b

    def __call__(self, x):
        x = self._as_points(x)
        r = np.linalg.norm(x, axis=-1)
        return self.b ** self.d * self.pair.psi_radial(self.b * r) ** 2

    def fourier(self, k):
        k = self._as_points(k)
        return self.pair.autocorr(np.linalg.norm(k, axis=-1) / self.b)

    @property
    def hat0(self):
        return self.pair.autocorr0

    compact_spectrum = True

    def _fits_nyquist(self, geometry):
        return 2 * PSI_SUPPORT * self.b < geometry.nyquist_radius

    def spectral_support(self, k):
        k = self._as_points(k)
        return np.linalg.norm(k, axis=-1) <= 2 * PSI_SUPPORT * self.b

    @property
    def cube_side(self):
        return self.pair.a / self.b

    @property
    def decay_constant(self):
        return self.pair.decay_constant / self.b


@lru_cache(maxsize=None)
def _anticonc_reach(d, rtol):
    pair = build_bump_pair(d)
    r = np.linspace(0, 2000.0, 200001)
    prof = pair.psi_radial(r) ** 2
    above = np.flatnonzero(prof > rtol * prof[0])
    return float(r[above[-1] + 1])


def anticonc_phi(pair, b):
    return AnticoncPhi(pair, float(b))


@dataclass(frozen=True, eq=False)
class RigidityPhi(TestFunction):
    """``phi(x) = C exp(i <theta + mu, x>) prod_i sinc^2(beta x_i)``.

    ``phi_hat`` is ``C (pi/beta)^d`` times the product of unit triangles of
    half-width ``2 beta`` centred at ``theta + mu``.  ``C = (beta/pi)^d`` makes
    that peak equal to one.
    """

    mu: np.ndarray
    theta: np.ndarray
    beta: float
    normalized: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @property
    def d(self):
        return self.theta.size

    @property
    def constant(self):
        return (self.beta / np.pi) ** self.d if self.normalized else 1.0

    @property
    def frequency(self):
        return self.theta + self.mu

    def __call__(self, x):
        x = self._as_points(x)
        env = np.prod(np.sinc(self.beta * x / np.pi) ** 2, axis=-1)
        return self.constant * np.exp(1j * (x @ self.frequency)) * env

    def fourier(self, k):
        k = self._as_points(k)
        q = np.abs(k - self.frequency) / (2 * self.beta)
        tri = np.prod(np.clip(1 - q, 0, None), axis=-1)
        return self.constant * (np.pi / self.beta) ** self.d * tri

    @property
    def hat0(self):
        return self.fourier(np.zeros(self.d))

    compact_spectrum = True

    def _fits_nyquist(self, geometry):
        return bool(np.all(np.abs(self.frequency) + 2 * self.beta < geometry.nyquist_radius))

    def spectral_support(self, k):
        k = self._as_points(k)
        return np.max(np.abs(k - self.frequency), axis=-1) <= 2 * self.beta

    def periodized(self, x, box_length):
        """Exact periodization: Fejer form when ``beta L / pi`` and ``(theta+mu) L / 2 pi``
        are integers, otherwise the finite Fourier series (Poisson summation)."""
        x = self._as_points(x)
        L = box_length
        M = self.beta * L / np.pi
        w = self.frequency * L / (2 * np.pi)
        if np.isclose(M, round(M)) and round(M) >= 1 and np.allclose(w, np.round(w)):
            M = int(round(M))
            u = np.pi * x / L
            s = np.sin(u)
            with np.errstate(invalid="ignore", divide="ignore"):
                fej = np.where(np.abs(s) < 1e-300, 1.0, np.sin(M * u) ** 2 / (M ** 2 * s ** 2))
            return self.constant * np.exp(1j * (x @ self.frequency)) * np.prod(fej, axis=-1)
        dk = 2 * np.pi / L
        lo = np.floor((self.frequency - 2 * self.beta) / dk).astype(int)
        hi = np.ceil((self.frequency + 2 * self.beta) / dk).astype(int)
        axes = [np.arange(l, h + 1) * dk for l, h in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        ks = np.stack([g.ravel() for g in grids], axis=1)
        coef = self.fourier(ks) / L ** self.d
        keep = coef != 0
        return np.exp(1j * (x @ ks[keep].T)) @ coef[keep]


def rigidity_phi(mu, theta, beta, gap=None, normalized=True):
    """Rigidity window; with ``gap`` given, its spectral cube must lie inside the mask."""
    phi = RigidityPhi(mu, theta, float(beta), normalized)
    if gap is not None:
        g = gap.geometry
        inside = phi.spectral_support(g.wavevectors)
        # the continuum cube must not reach any unmasked mode
        if np.any(inside & ~gap.mask):
            raise SupportError("shifted cube escapes the gap region")
    return phi


def smooth_step(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1."""
    t = np.asarray(t, dtype=float)
    out = np.where(t <= 0, 1.0, 0.0)
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    with np.errstate(over="ignore", under="ignore"):
        f1 = np.exp(-1.0 / (1 - tm))
        f0 = np.exp(-1.0 / tm)
    out[mid] = f1 / (f1 + f0)
    return out


@dataclass(frozen=True, eq=False)
class MonomialWindow(TestFunction):
    """``x^[k] phi(x / L)`` with ``phi`` a bump that is 1 on ``|x|_inf <= radius``
    and 0 beyond ``2 radius``; equals ``x^[k]`` on that cube for every ``L >= 1``."""

    k: tuple
    L: float
    radius: float

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not self.radius > 0:
            raise ValueError("domain radius must be positive")
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))

    @property
    def d(self):
        return len(self.k)

    @property
    def reach(self):
        return 2 * self.radius * self.L * np.sqrt(self.d)

    def base(self, u):
        u = self._as_points(u)
        t = np.abs(u) / self.radius - 1.0
        return np.prod(smooth_step(t), axis=-1)

    def __call__(self, x):
        x = self._as_points(x)
        mono = np.prod(x ** np.asarray(self.k), axis=-1)
        return mono * self.base(x / self.L)

    def on_torus(self, geometry):
        if 4 * self.radius * self.L > geometry.box_length + 1e-12:
            raise SupportError("window does not fit in the periodic box")
        return self(geometry.centered_positions)

    def spectral_support(self, k):
        k = self._as_points(k)
        return np.ones(k.shape[:-1], dtype=bool)


def monomial_window(k, L, radius):
    return MonomialWindow(tuple(k), float(L), float(radius))
