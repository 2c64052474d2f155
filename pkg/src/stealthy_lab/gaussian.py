"""Finite Gaussian fields on Z^d_n with a prescribed structure function.

Sampling is spectral: unit complex Gaussians are scaled by ``sqrt(S(k))`` and
transformed back.  The normalized modes ``xi_tilde(k) = n^{-d/2} * forward_dft(xi)(k)``
then satisfy ``E|xi_tilde(k)|^2 = S(k)``, and the site covariance is
``C(r) = n^{-d} sum_k S(k) exp(i k.r)``.

RNG contract: sample ``index`` of seed ``seed`` is drawn from a Philox
counter-based generator keyed by ``seed + 2**64 * index``.  The first
``2 * n^d`` standard normals of that stream (real parts, then imaginary
parts, in flattened mode order) define the sample, so any sample can be
regenerated on its own.
"""

import csv
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .lattice import TorusGeometry, forward_dft
from .structure import StructureFunction, count_constraints

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class GaussianSpec:
    S: StructureFunction
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def geometry(self):
        return self.S.geometry


@dataclass(frozen=True, eq=False)
class FieldRealization:
    geometry: TorusGeometry
    values: np.ndarray = field(repr=False)
    seed: int = 0
    index: int = 0

    def normalized_modes(self):
        return forward_dft(self.values, self.geometry) / np.sqrt(self.geometry.size)


def _unit_modes(geometry, seed, index):
    bitgen = np.random.Philox(key=(int(seed) & _MASK64) | (int(index) << 64))
    z = np.random.Generator(bitgen).standard_normal((2, geometry.size))
    z = (z[0] + 1j * z[1]) / np.sqrt(2.0)
    # pair k with -k: h(-k) = conj(h(k)); self-conjugate modes become real N(0, 1)
    h = (z + np.conj(z[geometry.negated.ravel()])) / np.sqrt(2.0)
    return h.reshape(geometry.shape)


def sample_field_array(spec, count, start=0):
    """Stack of ``count`` realizations with indices ``start, start+1, ...``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    g = spec.geometry
    amp = np.sqrt(spec.S.values)
    out = np.empty((count,) + g.shape)
    for i in range(count):
        h = _unit_modes(g, spec.seed, start + i)
        out[i] = np.fft.ifftn(amp * h).real * np.sqrt(g.size)
    return out


def sample_field(spec, count, start=0):
    arr = sample_field_array(spec, count, start)
    return [FieldRealization(spec.geometry, a, spec.seed, start + i) for i, a in enumerate(arr)]


def covariance(spec):
    """``C(r)`` over lattice displacements ``r`` (indexed like sites)."""
    S = spec.S if isinstance(spec, GaussianSpec) else spec
    return np.fft.ifftn(S.values).real


def covariance_matrix(spec):
    g = spec.geometry
    C = covariance(spec).ravel()
    idx = g.site_indices.reshape(-1, g.d)
    diff = (idx[:, None, :] - idx[None, :, :]) % g.n
    flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), g.shape)
    return C[flat]


class Degeneracy(NamedTuple):
    constraints: int
    free_dims: int


def degeneracy_rank(spec):
    """Real linear constraints imposed by the gap, and the remaining dimensions."""
    c = count_constraints(spec.S.gap).real_constraints
    return Degeneracy(c, spec.geometry.size - c)


def empirical_covariance(fields):
    X = np.asarray([getattr(f, "values", f) for f in fields], dtype=float)
    X = X.reshape(X.shape[0], -1)
    return X.T @ X / X.shape[0]


def numerical_rank(matrix, rtol=1e-8):
    s = np.linalg.svd(np.asarray(matrix), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# ---------------------------------------------------------------- I/O

_MAGIC = b"SLFIELD1"
_HEADER = struct.Struct("<8sqqdQQ")


def write_field_binary(path, realization):
    """Header ``(magic, d, n, box_length, seed, index)`` then ``n^d`` little-endian float64."""
    g = realization.geometry
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.d, g.n, g.box_length, realization.seed, realization.index))
        fh.write(np.ascontiguousarray(realization.values, dtype="<f8").tobytes())


def read_field_binary(path):
    with open(path, "rb") as fh:
        magic, d, n, box, seed, index = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field record")
        g = TorusGeometry(d, n, box)
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(g.shape).copy()
    return FieldRealization(g, values, seed, index)


def write_field_csv(path, realization):
    g = realization.geometry
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "n", "box_length", "seed", "index"])
        w.writerow([g.d, g.n, repr(g.box_length), realization.seed, realization.index])
        w.writerow(["value"])
        for v in np.asarray(realization.values).ravel():
            w.writerow([repr(float(v))])


def read_field_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    d, n, box, seed, index = rows[1]
    g = TorusGeometry(int(d), int(n), float(box))
    values = np.array([float(r[0]) for r in rows[3:]]).reshape(g.shape)
    return FieldRealization(g, values, int(seed), int(index))
