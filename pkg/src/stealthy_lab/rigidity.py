"""Reconstruction of the inside of a window from data outside it.

Three reconstructions are provided:

* Gaussian fields: the gap modes of the field vanish, which gives linear
  equations ``sum_{x in D} xi(x) e^{-ik.x} = -sum_{x not in D} xi(x) e^{-ik.x}``
  for the erased values.
* Point sets: the empirical characteristic function of the inside points is
  computed from outside points with gap-supported sinc^2 windows, then inverted
  by a matrix pencil (d = 1) or nonlinear least squares (d = 2).
* Moments under fast spectral decay: ``x^[k] phi(x/L)`` windows equal ``x^[k]`` on
  the domain, so ``E I - (outside part)`` estimates the inside moment.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (ConditioningWarning, IllPosedWarning, InversionError, PrecisionError,
                     PreconditionError, RankDeficiencyError, ResolutionError, SupportError)
from .points import PointConfiguration, generate_stealthy
from .structure import count_constraints
from .testfunctions import monomial_window

RANK_RTOL = 1e-8
SIGMA_WARN = 1e-10


# ---------------------------------------------------------------- splits

@dataclass(frozen=True, eq=False)
class WindowSplit:
    """Partition of the torus sites into ``inside`` and ``outside``."""

    geometry: object
    inside: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.zeros(self.geometry.size, dtype=bool)
        ins = np.asarray(self.inside)
        if ins.dtype == bool:
            m[:] = ins.ravel()
        else:
            m[np.asarray(ins, dtype=int).ravel()] = True
        m = m.reshape(self.geometry.shape)
        m.setflags(write=False)
        object.__setattr__(self, "inside", m)

    @property
    def outside(self):
        return ~self.inside

    @classmethod
    def cube(cls, geometry, radius, center=None):
        """Sites within sup-norm ``radius`` of ``center`` (minimum image)."""
        c = np.zeros(geometry.d) if center is None else np.asarray(center, float)
        diff = geometry.signed_positions(geometry.site_positions - c)
        return cls(geometry, np.max(np.abs(diff), axis=-1) <= radius)


@dataclass(frozen=True)
class BallSplit:
    """Open ball ``B(center; radius)`` for point configurations on the torus."""

    radius: float
    center: tuple = None

    def split(self, cfg):
        c = np.zeros(cfg.d) if self.center is None else np.asarray(self.center, float)
        L = cfg.box_length
        x = (cfg.points - c + L / 2) % L - L / 2
        r = np.linalg.norm(x, axis=1)
        inside = r < self.radius
        return x[inside] + c, x[~inside] + c


# ---------------------------------------------------------------- fields

@dataclass(frozen=True, eq=False)
class FieldReconstruction:
    values: np.ndarray = field(repr=False)
    inside_values: np.ndarray = field(repr=False)
    residual: float = 0.0
    sigma_min: float = np.inf
    rank: int = 0
    constraints: int = 0

    def to_dict(self):
        return {"inside_values": self.inside_values.tolist(), "residual": self.residual,
                "sigma_min": self.sigma_min, "rank": self.rank, "constraints": self.constraints}


def reconstruct_field_inside(sample, gap, split):
    """Fill the inside sites of ``sample`` from its outside values and the gap mask.

    ``sample`` is a site array (inside entries are ignored) or a realization.
    """
    g = gap.geometry
    values = np.array(getattr(sample, "values", sample), dtype=float).reshape(g.shape)
    inside = split.inside.ravel()
    n_in = int(inside.sum())
    constraints = count_constraints(gap).real_constraints
    if n_in == 0:
        return FieldReconstruction(values, np.zeros(0), 0.0, np.inf, 0, constraints)
    if n_in > constraints:
        raise RankDeficiencyError(
            f"rank-deficient: {n_in} inside sites but only {constraints} real constraints")
    k = g.wavevectors.reshape(-1, g.d)[gap.mask.ravel()]
    x = g.site_positions.reshape(-1, g.d)
    flat = values.ravel().copy()
    flat[inside] = 0.0
    A = np.exp(-1j * (k @ x[inside].T))
    rhs = -np.exp(-1j * (k @ x[~inside].T)) @ flat[~inside]
    Ar = np.vstack([A.real, A.imag])
    br = np.concatenate([rhs.real, rhs.imag])
    s = np.linalg.svd(Ar, compute_uv=False)
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if rank < n_in:
        raise RankDeficiencyError(
            f"rank-deficient: character matrix has rank {rank} < {n_in} inside sites")
    sigma_min = float(s[n_in - 1])
    if sigma_min < SIGMA_WARN:
        warnings.warn(f"ill-conditioned reconstruction, sigma_min = {sigma_min:.3e}",
                      ConditioningWarning, stacklevel=2)
    sol, *_ = np.linalg.lstsq(Ar, br, rcond=None)
    residual = float(np.linalg.norm(Ar @ sol - br))
    flat[inside] = sol
    return FieldReconstruction(flat.reshape(g.shape), sol, residual, sigma_min, rank, constraints)


# ---------------------------------------------------------------- ECF

@dataclass(frozen=True, eq=False)
class ECFSamples:
    """Estimated ``sum_j exp(i theta.X_j)`` over inside points at each ``theta``."""

    thetas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    error_bar: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def count_estimate(self):
        """``N`` read off at ``theta = 0`` (requires a zero sample)."""
        zero = np.flatnonzero(np.all(self.thetas == 0, axis=1))
        if zero.size == 0:
            raise PreconditionError("theta grid has no zero sample")
        return int(round(self.values[zero[0]].real))

    def to_dict(self):
        return {"thetas": self.thetas.tolist(),
                "values": [[v.real, v.imag] for v in self.values],
                "error_bar": self.error_bar.tolist(), **self.meta}


def exact_ecf(points, thetas):
    x = np.asarray(points, dtype=float)
    t = np.asarray(thetas, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if x.size == 0:
        return np.zeros(t.shape[0], dtype=complex)
    return np.exp(1j * (t @ x.reshape(x.shape[0], -1).T)).sum(axis=1)


def _sinc2(beta, x):
    return np.prod(np.sinc(beta * x / np.pi) ** 2, axis=-1)


def _window_hat0(theta, beta):
    """``phi_hat(0)`` of ``exp(i theta.x) prod sinc^2(beta x_i)``."""
    tri = np.prod(np.clip(1 - np.abs(theta) / (2 * beta), 0, None), axis=-1)
    return (np.pi / beta) ** theta.shape[-1] * tri


def sinc2_tail_bound(rho, beta, R, d):
    """Bound on the window mass beyond sup-norm radius ``R`` at intensity ``rho``.

    Uses ``sinc^2(beta t) <= min(1, (beta t)^-2)`` per coordinate, whose line
    integral is ``4/beta`` in total and ``4/beta - 2/(beta^2 R)`` within ``|t| <= R``.
    The radius is shrunk by one mean spacing to cover the discreteness of the count.
    """
    Reff = R - rho ** (-1.0 / d)
    if Reff <= 1.0 / beta:
        return np.inf
    full = 4.0 / beta
    inner = full - 2.0 / (beta ** 2 * Reff)
    return rho * (full ** d - inner ** d)


def ecf_from_outside(outside, rho, mu, thetas, beta0, r_trunc, tolerance=None):
    """Continuum estimator: ``rho phi_hat(0) - sum_outside phi`` for sinc^2 windows,
    Richardson-extrapolated over ``beta0, beta0/2, beta0/4`` to ``beta -> 0``.

    ``outside`` holds every outside point with sup-norm ``<= r_trunc`` (points
    farther out are dropped).  The shifted cube ``theta + mu +- 2 beta0`` must lie
    inside the gap; the caller certifies that.
    """
    x = np.asarray(outside, dtype=float)
    t = np.asarray(thetas, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    d = t.shape[1]
    x = x.reshape(-1, d)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (d,))
    x = x[np.max(np.abs(x), axis=1) <= r_trunc]
    freq = t + mu
    betas = [beta0, beta0 / 2, beta0 / 4]
    F, tails = [], []
    for beta in betas:
        env = _sinc2(beta, x)
        s = np.array([np.sum(env * np.exp(1j * (x @ f))) for f in freq])
        F.append(rho * _window_hat0(freq, beta) - s)
        tails.append(sinc2_tail_bound(rho, beta, r_trunc, d))
    F = np.array(F)
    r1 = (4 * F[2] - F[1]) / 3
    r2 = (64 * F[2] - 20 * F[1] + F[0]) / 45
    trunc = (64 * tails[2] + 20 * tails[1] + tails[0]) / 45
    extrap = np.abs(r2 - r1)
    bar = trunc + extrap + 1e-13 * (1 + np.abs(r2))
    meta = {"mode": "continuum", "betas": betas, "r_trunc": float(r_trunc),
            "truncation_bound": float(trunc), "fixed_beta_values": F[2].tolist()}
    if tolerance is not None and np.max(bar) > tolerance:
        raise PrecisionError(
            f"ECF error bar {np.max(bar):.3e} exceeds tolerance {tolerance:.3e}; increase r_trunc")
    return ECFSamples(t, r2, np.broadcast_to(bar, r2.shape).copy(), meta)


def torus_theta_grid(gap, ladder=4):
    """Mode wavevectors ``theta`` whose whole Fejer support (``|j - j_theta| < ladder``
    per axis) stays inside the gap mask."""
    g = gap.geometry
    j = g.mode_indices.reshape(-1, g.d)
    mask = gap.mask.ravel()
    masked = {tuple(v) for v in j[mask]}
    offs = np.stack(np.meshgrid(*([np.arange(-ladder + 1, ladder)] * g.d), indexing="ij"),
                    axis=-1).reshape(-1, g.d)
    keep = [tuple(v) for v in j if all(tuple(v + o) in masked for o in offs)]
    return np.array(sorted(keep), dtype=float).reshape(-1, g.d) * g.mode_spacing


def ecf_on_torus(cfg, split, thetas, ladder=(4, 2, 1)):
    """Periodic estimator for a certified configuration on its own torus.

    Windows are ``exp(i theta.x)`` times the periodized sinc^2 at
    ``beta = M pi / L`` (a Fejer kernel); at ``M = 1`` it is the character itself,
    so the floor of the ladder already is the ``beta -> 0`` limit.  The error bar
    is ``|rho_tilde(theta)| <= sqrt(E / 2)`` from the energy certificate plus roundoff.
    Values at larger ``M`` and their Richardson combination are kept as diagnostics.
    """
    if not cfg.certified:
        raise PreconditionError("configuration is not certified stealthy")
    L, d = cfg.box_length, cfg.d
    t = np.asarray(thetas, dtype=float).reshape(-1, d)
    g = cfg.gap.geometry
    jt = np.round(t / g.mode_spacing).astype(int)
    if not np.allclose(jt * g.mode_spacing, t):
        raise PreconditionError("torus ECF needs theta on the mode grid")
    masked = {tuple(v) for v in g.mode_indices.reshape(-1, d)[cfg.gap.mask.ravel()]}
    M_max = max(ladder)
    offs = np.stack(np.meshgrid(*([np.arange(-M_max + 1, M_max)] * d), indexing="ij"),
                    axis=-1).reshape(-1, d)
    for v in jt:
        if not all(tuple(v + o) in masked for o in offs):
            raise SupportError(f"window at theta index {tuple(v)} leaves the gap")
    _, outside = split.split(cfg)
    rho = cfg.rho
    per_M = {}
    for M in ladder:
        beta = M * np.pi / L
        u = np.pi * outside / L
        s = np.sin(u)
        with np.errstate(invalid="ignore", divide="ignore"):
            fej = np.where(np.abs(s) < 1e-300, 1.0, np.sin(M * u) ** 2 / (M ** 2 * s ** 2))
        env = np.prod(fej, axis=-1)
        vals = rho * _window_hat0(t, beta) - np.exp(1j * (t @ outside.T)) @ env
        per_M[M] = vals
    floor = per_M[min(ladder)]
    bar = np.sqrt(max(cfg.energy, 0.0) / 2) + 1e-13 * max(cfg.N, 1)
    meta = {"mode": "torus", "ladder": list(ladder), "energy": cfg.energy,
            "box_length": L}
    if sorted(ladder) == [1, 2, 4]:
        rich = (64 * per_M[1] - 20 * per_M[2] + per_M[4]) / 45
        meta["richardson_shift"] = float(np.max(np.abs(rich - floor)))
        meta["fixed_beta_shift"] = float(np.max(np.abs(per_M[4] - floor)))
    return ECFSamples(t, floor, np.full(floor.shape, bar), meta)


# ---------------------------------------------------------------- inversion

@dataclass(frozen=True, eq=False)
class PointRecovery:
    positions: np.ndarray
    residual: float
    weights: np.ndarray = field(repr=False, default=None)
    position_bar: float = None

    def to_dict(self):
        return {"positions": self.positions.tolist(), "residual": self.residual,
                "weights": None if self.weights is None else np.real(self.weights).tolist(),
                "position_bar": self.position_bar}


def _model(pos, thetas):
    return np.exp(1j * (thetas @ pos.T)).sum(axis=1)


def _fit_positions(thetas, values, x0, d):
    def res(z):
        r = _model(z.reshape(-1, d), thetas) - values
        return np.concatenate([r.real, r.imag])

    sol = least_squares(res, x0.ravel(), xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    return sol.x.reshape(-1, d), sol


def _position_bar(thetas, pos, bar):
    """Linearized position error bound from the ECF error bar."""
    phase = np.exp(1j * (thetas @ pos.T))
    cols = []
    for j in range(pos.shape[0]):
        for i in range(pos.shape[1]):
            c = 1j * thetas[:, i] * phase[:, j]
            cols.append(np.concatenate([c.real, c.imag]))
    J = np.array(cols).T
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] == 0:
        return np.inf, 0.0
    return float(np.sqrt(2 * thetas.shape[0]) * bar / s[-1]), float(s[-1])


def matrix_pencil(samples, count):
    """Nodes ``z_n`` of ``f_j = sum_n c_n z_n^j`` from uniformly spaced samples."""
    f = np.asarray(samples, dtype=complex)
    m = f.size
    P = m // 2
    if count < 1 or count > min(P, m - P):
        raise InversionError(f"{m} samples cannot resolve {count} nodes", None, np.inf)
    H = np.array([f[i:i + P + 1] for i in range(m - P)])
    _, _, Vh = np.linalg.svd(H)
    V = Vh[:count].T
    z = np.linalg.eigvals(np.linalg.pinv(V[:-1]) @ V[1:])
    Z = np.vander(z, m, increasing=True).T
    c, *_ = np.linalg.lstsq(Z, f, rcond=None)
    return z, c


def invert_ecf_to_points(ecf, N, d, tol=1e-6):
    """Positions whose characteristic sums match ``ecf``; sorted (lexicographically for d = 2)."""
    t = ecf.thetas
    f = ecf.values
    if d not in (1, 2):
        raise PreconditionError("inversion supports d = 1 or 2")
    if t.shape[1] != d:
        raise PreconditionError("theta grid dimension does not match d")
    if N == 0:
        return PointRecovery(np.zeros((0, d)), float(np.linalg.norm(f)), np.zeros(0), 0.0)
    if d == 1:
        order = np.argsort(t[:, 0])
        tt, ff = t[order, 0], f[order]
        dt = np.diff(tt)
        if dt.size == 0 or not np.allclose(dt, dt[0]):
            raise PreconditionError("matrix pencil needs uniformly spaced theta samples")
        z, c = matrix_pencil(ff, N)
        nodes = np.angle(z) / dt[0]
        # samples start at tt[0], so the weights carry a factor exp(i tt[0] x)
        weights = c * np.exp(-1j * tt[0] * nodes)
        if np.max(np.abs(weights - 1)) > 1e-3:
            warnings.warn("matrix pencil weights are not all one; points are unresolved "
                          "or nearly coincident", IllPosedWarning, stacklevel=2)
        x0 = _seed_from_weights(nodes, weights, N, np.pi / (dt[0] * dt.size)).reshape(-1, 1)
    else:
        x0, weights = _adjoint_peaks(t, f, N)
    pos, _ = _fit_positions(t, f, x0, d)
    resid = _model(pos, t) - f
    residual = float(np.max(np.abs(resid)))
    pos = pos[np.lexsort(pos.T[::-1])]
    bar = float(np.max(ecf.error_bar)) if ecf.error_bar is not None else 0.0
    pbar, smin = _position_bar(t, pos, max(bar, residual))
    sep = np.inf
    if N > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=-1) + np.diag(np.full(N, np.inf))
        sep = float(dist.min())
    span = float(np.max(np.ptp(t, axis=0))) or 1.0
    if N > 1 and (sep < 1e-6 * 2 * np.pi / span or smin < 1e-8 * span * np.sqrt(t.shape[0])
                  or pbar >= sep):
        warnings.warn(f"points nearly coincide (separation {sep:.3e}); recovery is ill-posed",
                      IllPosedWarning, stacklevel=2)
    if residual > tol + 10 * bar:
        raise InversionError(f"inversion residual {residual:.3e} above tolerance",
                             pos, residual)
    return PointRecovery(pos, residual, np.asarray(weights), pbar)


def _seed_from_weights(nodes, weights, N, spread):
    """Repeat each node by its rounded weight so merged pairs start as pairs."""
    mult = np.maximum(np.round(weights.real).astype(int), 0)
    while mult.sum() < N:
        mult[int(np.argmax(weights.real - mult))] += 1
    while mult.sum() > N:
        mult[int(np.argmax(mult - weights.real))] -= 1
    seeds = []
    for x, m in zip(nodes, mult):
        seeds.extend(x + spread * 1e-3 * (np.arange(m) - (m - 1) / 2))
    return np.array(seeds)


def _adjoint_peaks(thetas, values, N, grid_pts=201):
    """Greedy peak picking on ``|sum_theta F(theta) e^{-i theta.x}|`` over a box."""
    # positions are resolvable up to the aliasing period of the grid
    steps = [np.min(np.diff(np.unique(thetas[:, i]))) for i in range(thetas.shape[1])]
    half = [np.pi / s for s in steps]
    axes = [np.linspace(-h, h, grid_pts) for h in half]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, thetas.shape[1])
    resid = values.copy()
    found = []
    for _ in range(N):
        amp = np.abs(np.exp(-1j * (G @ thetas.T)) @ resid)
        p = G[int(np.argmax(amp))]
        found.append(p)
        resid = resid - np.exp(1j * (thetas @ p))
    return np.array(found), np.ones(N)


# ---------------------------------------------------------------- planted configurations

def plant_configuration(N, box_length, gap, inside_points, radius, seed, **kwargs):
    """Certified stealthy configuration containing ``inside_points`` (all within
    ``radius`` of the origin) and no other point there (d = 1)."""
    inside = np.asarray(inside_points, dtype=float).reshape(-1, 1)
    if inside.size and np.max(np.abs(inside)) >= radius:
        raise PreconditionError("planted points must lie inside the ball")
    return generate_stealthy(N, 1, box_length, gap, seed, fixed_points=inside % box_length,
                             exclusion_radius=radius, **kwargs)


# ---------------------------------------------------------------- moments

@dataclass(frozen=True, eq=False)
class MomentRecovery:
    multi_indices: list
    scales: list
    estimates: np.ndarray = field(repr=False)   # (samples, indices, scales)
    truth: np.ndarray = field(repr=False)       # (samples, indices)

    @property
    def errors(self):
        return np.abs(self.estimates - self.truth[:, :, None])

    @property
    def median_errors(self):
        return np.median(self.errors, axis=0)

    def to_dict(self):
        return {"multi_indices": [list(k) for k in self.multi_indices], "scales": self.scales,
                "median_errors": self.median_errors.tolist()}


def multi_indices_up_to(d, order):
    out = []
    for total in range(order + 1):
        for k in np.ndindex(*([total + 1] * d)):
            if sum(k) == total:
                out.append(tuple(int(v) for v in k))
    return out


def _fast_decay_certified(S):
    if S.family == "fast_decay":
        return True
    if S.family == "zero":
        return True
    return False


def recover_inside_moments(fields, geometry, domain_radius, multi_indices, scales,
                           S=None, check=True, mean=0.0):
    """Outside-computable moment surrogates ``m_hat[k](L)`` and the inside truths.

    ``m_hat = E[I(w_L)] - sum_{x outside D} w_L(x) xi(x) h^d`` with
    ``w_L = x^[k] phi(x/L)``; ``E[I(w_L)] = mean * int w_L`` (zero for centered fields).
    """
    if check:
        if S is None:
            raise PreconditionError("a structure function is needed to certify fast decay")
        if not _fast_decay_certified(S):
            raise PreconditionError("structure function is not certified fast-decaying")
    g = geometry
    scales = [float(L) for L in scales]
    for L in scales:
        if L > g.box_length / 4 or 4 * domain_radius * L > g.box_length + 1e-12:
            raise ResolutionError(f"scale L = {L:g} is not resolvable in box {g.box_length:g}")
    X = np.asarray([getattr(f, "values", f) for f in np.atleast_1d(fields)]) \
        if not isinstance(fields, np.ndarray) else fields
    X = X.reshape(-1, g.size)
    pos = g.centered_positions.reshape(-1, g.d)
    in_D = np.max(np.abs(pos), axis=1) <= domain_radius
    h = g.cell_volume
    est = np.empty((X.shape[0], len(multi_indices), len(scales)))
    truth = np.empty((X.shape[0], len(multi_indices)))
    for a, k in enumerate(multi_indices):
        mono = np.prod(pos ** np.asarray(k), axis=1)
        truth[:, a] = (X[:, in_D] @ mono[in_D]) * h
        for c, L in enumerate(scales):
            w = monomial_window(k, L, domain_radius)(pos)
            expected = mean * w.sum() * h
            est[:, a, c] = expected - (X[:, ~in_D] @ w[~in_D]) * h
    return MomentRecovery(list(multi_indices), scales, est, truth)
