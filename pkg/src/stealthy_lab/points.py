"""Point configurations in a periodic box and stealthy ground states.

Stealthy configurations are produced by driving the collective coordinates
``rho_tilde(k) = sum_j exp(-i k.x_j)`` to zero on every masked nonzero mode,
i.e. by minimizing ``E = sum_{k in gap, k != 0} |rho_tilde(k)|^2`` with L-BFGS
and its closed-form gradient, restarting from fresh random positions when a
run stalls.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError, EstimatorError, PreconditionError
from .lattice import TorusGeometry
from .structure import GapRegion, count_constraints, gap_radius

STEALTHY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    d: int
    box_length: float
    points: np.ndarray = field(repr=False)
    gap: GapRegion = None
    energy: float = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, self.d)
        pts = pts % self.box_length
        # x % L can round up to L itself for tiny negative x
        pts[pts >= self.box_length] = 0.0
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "box_length", float(self.box_length))

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def volume(self):
        return self.box_length ** self.d

    @property
    def rho(self):
        return self.N / self.volume

    @property
    def certified(self):
        return (self.gap is not None and self.energy is not None
                and self.energy <= STEALTHY_TOL * max(self.N, 1) ** 2)

    def certified_radius(self):
        return gap_radius(self.gap) if self.gap is not None else 0.0

    def signed_points(self):
        L = self.box_length
        return (self.points + L / 2) % L - L / 2

    def translated(self, shift):
        return PointConfiguration(self.d, self.box_length, self.points + np.asarray(shift),
                                  self.gap, self.energy, dict(self.metadata))

    def with_points(self, points, **changes):
        kw = dict(gap=self.gap, energy=self.energy, metadata=dict(self.metadata))
        kw.update(changes)
        return PointConfiguration(self.d, self.box_length, points, **kw)


def collective_coordinates(points, wavevectors):
    """``rho_tilde(k)`` for each row of ``wavevectors``."""
    x = np.asarray(points, dtype=float)
    k = np.atleast_2d(np.asarray(wavevectors, dtype=float))
    if x.size == 0:
        return np.zeros(k.shape[0], dtype=complex)
    return np.exp(-1j * (k @ x.reshape(x.shape[0], -1).T)).sum(axis=1)


def structure_factor(cfg, modes):
    """Single-configuration estimator ``|rho_tilde(k)|^2 / N`` at nonzero modes.

    Normalized so that an ideal-gas sample has expectation 1.
    """
    if cfg.N == 0:
        raise EstimatorError("structure factor is undefined for an empty configuration")
    k = np.atleast_2d(np.asarray(modes, dtype=float)).reshape(-1, cfg.d)
    if np.any(np.all(k == 0, axis=1)):
        raise ValueError("k = 0 is excluded from the structure factor")
    return np.abs(collective_coordinates(cfg.points, k)) ** 2 / cfg.N


def gap_wavevectors(gap, box_length=None):
    """Masked nonzero wavevectors of a gap, shape ``(m, d)``."""
    g = gap.geometry
    if box_length is not None and not np.isclose(box_length, g.box_length):
        raise PreconditionError("gap geometry box_length does not match the configuration")
    return g.wavevectors[gap.nonzero_mask]


def energy(points, wavevectors):
    return float(np.sum(np.abs(collective_coordinates(points, wavevectors)) ** 2))


def energy_and_gradient(flat_x, wavevectors, d, weights=None):
    """``E`` and ``dE/dx_j = 2 sum_k k Im(conj(rho_tilde(k)) exp(-i k.x_j))``.

    Optional per-mode ``weights`` let a symmetric mode set be represented by one
    mode of each ``+-k`` pair with weight 2.
    """
    x = flat_x.reshape(-1, d)
    k = wavevectors
    phase = np.exp(-1j * (k @ x.T))            # (m, N)
    rho = phase.sum(axis=1)
    if weights is not None:
        rho_w = rho * weights
        E = float(np.sum(weights * np.abs(rho) ** 2))
    else:
        rho_w = rho
        E = float(np.sum(np.abs(rho) ** 2))
    w = np.imag(np.conj(rho_w)[:, None] * phase)  # (m, N)
    grad = 2.0 * (w.T @ k)                        # (N, d)
    return E, grad.ravel()


def _half_modes(gap):
    """One wavevector of each masked ``+-k`` pair with weight 2 (1 if self-conjugate)."""
    g = gap.geometry
    idx = np.flatnonzero(gap.nonzero_mask.ravel())
    neg = g.negated.ravel()[idx]
    keep = idx <= neg
    w = np.where(idx[keep] == neg[keep], 1.0, 2.0)
    return g.wavevectors.reshape(-1, g.d)[idx[keep]], w


def _random_positions(rng, N, d, box_length, exclusion_radius):
    if not exclusion_radius:
        return rng.uniform(0, box_length, (N, d))
    L = box_length
    return rng.uniform(exclusion_radius, L - exclusion_radius, (N, d))


def generate_stealthy(N, d, box_length, gap, seed, *, tol=STEALTHY_TOL, max_restarts=20,
                      maxiter=20000, fixed_points=None, exclusion_radius=None):
    """Minimize the collective-coordinate energy until ``E <= tol * N^2``.

    ``fixed_points`` are held in place and counted in ``N``; with
    ``exclusion_radius`` (d = 1 only) the free points are confined to
    ``exclusion_radius <= x <= box_length - exclusion_radius``, i.e. kept out of the
    ball of that radius around the origin.  Runs are seeded by ``(seed, restart)``.
    """
    if gap.geometry.d != d:
        raise PreconditionError("gap dimension does not match d")
    k = gap_wavevectors(gap, box_length)
    constraints = count_constraints(gap).real_constraints - int(gap.contains_origin)
    fixed = np.zeros((0, d)) if fixed_points is None else np.asarray(fixed_points, float).reshape(-1, d)
    n_free = N - fixed.shape[0]
    if n_free < 0:
        raise PreconditionError("more fixed points than N")
    if constraints >= d * n_free and constraints > 0:
        raise PreconditionError(
            f"gap imposes {constraints} real constraints but only {d * n_free} coordinates are free"
        )
    if exclusion_radius and d != 1:
        raise PreconditionError("exclusion_radius is only supported for d = 1")

    kh, wh = _half_modes(gap)
    target = tol * N ** 2
    best = None
    best_E = np.inf
    total_iter = 0
    for restart in range(max_restarts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), restart]))
        x0 = _random_positions(rng, n_free, d, box_length, exclusion_radius)
        if k.shape[0] == 0:
            x, E, nit = x0, 0.0, 0
        else:
            if fixed.shape[0]:
                rho_fixed = collective_coordinates(fixed, kh)

                def fun(z):
                    xx = z.reshape(-1, d)
                    phase = np.exp(-1j * (kh @ xx.T))
                    rho = phase.sum(axis=1) + rho_fixed
                    w = np.imag(np.conj(rho * wh)[:, None] * phase)
                    return float(np.sum(wh * np.abs(rho) ** 2)), (2.0 * (w.T @ kh)).ravel()
            else:
                def fun(z):
                    return energy_and_gradient(z, kh, d, wh)
            bounds = None
            if exclusion_radius:
                bounds = [(exclusion_radius, box_length - exclusion_radius)] * n_free
            res = minimize(fun, x0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                           options=dict(maxiter=maxiter, ftol=0.0, gtol=0.0, maxcor=30))
            x, E, nit = res.x.reshape(-1, d), float(res.fun), int(res.nit)
        total_iter += nit
        if E < best_E:
            best, best_E = x, E
        if E <= target:
            break
    allpts = np.vstack([fixed, best])
    if best_E > target:
        raise ConvergenceError(
            f"energy stalled at {best_E:.3e} > {target:.3e} after {max_restarts} restarts",
            best_energy=best_E,
            best=PointConfiguration(d, box_length, allpts, gap, best_E),
        )
    final_E = energy(allpts % box_length, k) if k.shape[0] else 0.0
    meta = {"iterations": total_iter, "restarts": restart + 1, "seed": int(seed),
            "tolerance": tol, "n_fixed": int(fixed.shape[0])}
    return PointConfiguration(d, box_length, allpts, gap, final_E, meta)


def lattice_configuration(d, n, box_length):
    axes = np.meshgrid(*([np.arange(n) * (box_length / n)] * d), indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def perturbed_lattice(d, n, box_length, amplitude, gap=None, seed=0):
    """``n^d`` lattice sites plus i.i.d. uniform jitter in ``[-amplitude, amplitude]^d``."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    pts = lattice_configuration(d, n, box_length)
    if amplitude > 0:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        pts = pts + rng.uniform(-amplitude, amplitude, pts.shape)
    E = None
    if gap is not None:
        E = energy(pts, gap_wavevectors(gap, box_length))
    return PointConfiguration(d, box_length, pts, gap, E, {"amplitude": amplitude, "seed": int(seed)})


# ---------------------------------------------------------------- I/O

def gap_descriptor(gap):
    if gap is None:
        return None
    g = gap.geometry
    return {"geometry": {"d": g.d, "n": g.n, "box_length": g.box_length}, **gap.describe()}


def gap_from_descriptor(desc):
    if not desc:
        return None
    desc = dict(desc)
    geometry = TorusGeometry(**desc.pop("geometry"))
    return GapRegion.from_description(geometry, desc)


def write_points_csv(path, cfg):
    """Header row ``d, box_length, N, gap, energy`` with values, then one point per row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "box_length", "N", "gap", "energy"])
        gap = json.dumps(gap_descriptor(cfg.gap), separators=(",", ":"))
        w.writerow([cfg.d, repr(cfg.box_length), cfg.N, gap,
                    "" if cfg.energy is None else repr(cfg.energy)])
        w.writerow([f"x{i}" for i in range(cfg.d)])
        for p in cfg.points:
            w.writerow([repr(float(v)) for v in p])


def read_points_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    d, box, N, gap, E = rows[1]
    pts = np.array([[float(v) for v in r] for r in rows[3:]]).reshape(-1, int(d))
    if pts.shape[0] != int(N):
        raise ValueError(f"{path}: header declares {N} points, found {pts.shape[0]}")
    return PointConfiguration(int(d), float(box), pts, gap_from_descriptor(json.loads(gap)),
                              None if E == "" else float(E))


def ball_gap(d, box_length, b):
    """Ball gap of radius ``b`` on a mode grid just wide enough to contain it."""
    jmax = int(np.floor(b * box_length / (2 * np.pi)))
    n = 2 * (jmax + 2)
    return GapRegion.ball(TorusGeometry(d, n, box_length), b)
