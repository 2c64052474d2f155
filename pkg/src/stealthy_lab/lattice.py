"""Discrete torus Z^d_n, its wave space, and the DFT convention used everywhere.

Conventions
-----------
Sites sit at ``x = i * box_length / n`` for ``i`` in ``{0, ..., n-1}^d``.
Modes are ``k = 2*pi*j / box_length`` with signed index ``j`` in
``{-floor(n/2), ..., ceil(n/2) - 1}^d``.

Arrays over sites or modes have shape ``(n,) * d``.  Mode arrays use the
FFT layout: axis position ``p`` holds signed index ``j = p`` if
``p < ceil(n/2)`` else ``p - n``.  Flattening in C order gives the stable
mode ordering used by :func:`mode_grid`: lexicographic in the unsigned
position, so mode 0 is always first.

The forward transform is unnormalized, ``a_hat(k) = sum_x a(x) exp(-i k.x)``;
the inverse carries the ``1/n^d``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TorusGeometry:
    d: int
    n: int
    box_length: float = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DimensionError(f"dimension must be a positive integer, got {self.d}")
        if int(self.n) != self.n or self.n < 2:
            raise DimensionError(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n", int(self.n))
        if self.box_length is None:
            object.__setattr__(self, "box_length", float(self.n))
        if not self.box_length > 0:
            raise DimensionError(f"box_length must be positive, got {self.box_length}")
        object.__setattr__(self, "box_length", float(self.box_length))

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n ** self.d

    @property
    def spacing(self):
        return self.box_length / self.n

    @property
    def cell_volume(self):
        return self.spacing ** self.d

    @property
    def mode_spacing(self):
        return 2 * np.pi / self.box_length

    @property
    def nyquist_radius(self):
        return np.pi * self.n / self.box_length

    @cached_property
    def signed_index_1d(self):
        p = np.arange(self.n)
        half = -(-self.n // 2)
        return np.where(p < half, p, p - self.n)

    @cached_property
    def mode_indices(self):
        """Signed mode indices, shape ``(n,)*d + (d,)``."""
        axes = np.meshgrid(*([self.signed_index_1d] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    @cached_property
    def wavevectors(self):
        return self.mode_indices * self.mode_spacing

    @cached_property
    def mode_norms(self):
        return np.linalg.norm(self.wavevectors, axis=-1)

    @cached_property
    def site_indices(self):
        axes = np.meshgrid(*([np.arange(self.n)] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    @cached_property
    def site_positions(self):
        return self.site_indices * self.spacing

    @cached_property
    def centered_positions(self):
        """Minimum-image site coordinates in ``[-box/2, box/2)``."""
        return self.signed_positions(self.site_positions)

    def signed_positions(self, x):
        L = self.box_length
        return (np.asarray(x, dtype=float) + L / 2) % L - L / 2

    @cached_property
    def negated(self):
        """Flat index of ``-k`` for every flat mode index."""
        neg = (-self.site_indices) % self.n
        return np.ravel_multi_index(tuple(np.moveaxis(neg, -1, 0)), self.shape).reshape(self.shape)

    @cached_property
    def self_conjugate(self):
        """Modes with ``-k == k`` on the torus (zero and Nyquist-type modes)."""
        return self.negated == np.arange(self.size).reshape(self.shape)

    def as_lattice_array(self, values, dtype=complex):
        a = np.asarray(values, dtype=dtype)
        if a.shape == self.shape:
            return a
        if a.size == self.size and a.ndim == 1:
            return a.reshape(self.shape)
        raise DimensionError(
            f"array of shape {a.shape} does not match geometry n={self.n}, d={self.d}"
        )


def forward_dft(a, geometry):
    """Unnormalized forward transform ``sum_x a(x) exp(-i k.x)`` in FFT layout."""
    a = geometry.as_lattice_array(a)
    return np.fft.fftn(a)


def inverse_dft(a_hat, geometry):
    """Inverse of :func:`forward_dft`, carrying ``1/n^d``."""
    a_hat = geometry.as_lattice_array(a_hat)
    return np.fft.ifftn(a_hat)


def direct_dft(a, geometry):
    """O(n^{2d}) character sum; reference implementation for tests."""
    a = geometry.as_lattice_array(a).ravel()
    x = geometry.site_positions.reshape(-1, geometry.d)
    k = geometry.wavevectors.reshape(-1, geometry.d)
    phase = np.exp(-1j * (k @ x.T))
    return (phase @ a).reshape(geometry.shape)


def mode_grid(geometry):
    """All ``n^d`` modes as ``(j, k)`` pairs in flattened FFT order (mode 0 first)."""
    j = geometry.mode_indices.reshape(-1, geometry.d)
    k = geometry.wavevectors.reshape(-1, geometry.d)
    return [(tuple(int(v) for v in jj), kk.copy()) for jj, kk in zip(j, k)]


def is_conjugate_symmetric(a_hat, geometry, tol=1e-12):
    a_hat = geometry.as_lattice_array(a_hat).ravel()
    mirrored = np.conj(a_hat[geometry.negated.ravel()])
    scale = max(np.max(np.abs(a_hat)), 1.0)
    return bool(np.max(np.abs(a_hat - mirrored)) <= tol * scale)
