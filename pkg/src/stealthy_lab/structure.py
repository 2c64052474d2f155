"""Structure functions with spectral gaps on the discrete wave space.

A gap region is realized as a boolean mask over the modes of a
:class:`~stealthy_lab.lattice.TorusGeometry`; every gap-dependent check in the
package is stated against this discrete mask.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NotStealthyError, PreconditionError
from .lattice import TorusGeometry


@dataclass(frozen=True, eq=False)
class GapRegion:
    """Open set of wavevectors on which S vanishes, resolved to a mode mask.

    ``kind`` is one of ``"ball"`` (centered at the origin, radius ``radius``),
    ``"cube"`` (sup-norm cube of ``half_width`` around ``center``, unioned with
    its mirror image so the mask is closed under ``k -> -k``) or
    ``"explicit"``.
    """

    geometry: TorusGeometry
    kind: str
    radius: float = None
    center: tuple = None
    half_width: float = None
    explicit_mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("ball", "cube", "explicit"):
            raise ValueError(f"unknown gap kind {self.kind!r}")
        mask = self._resolve()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.kind == "explicit" and not self.is_symmetric():
            raise PreconditionError("explicit gap mask is not closed under k -> -k")

    @classmethod
    def ball(cls, geometry, b):
        if not b > 0:
            raise ValueError("ball radius must be positive")
        return cls(geometry, "ball", radius=float(b))

    @classmethod
    def shifted_cube(cls, geometry, center, half_width):
        center = tuple(float(c) for c in np.broadcast_to(center, (geometry.d,)))
        if not half_width > 0:
            raise ValueError("half_width must be positive")
        return cls(geometry, "cube", center=center, half_width=float(half_width))

    @classmethod
    def explicit(cls, geometry, mask):
        mask = np.asarray(mask)
        if mask.dtype != bool:
            # a list of flat mode indices
            idx = np.asarray(mask, dtype=int).ravel()
            mask = np.zeros(geometry.size, dtype=bool)
            mask[idx] = True
        return cls(geometry, "explicit", explicit_mask=mask.reshape(geometry.shape).copy())

    @classmethod
    def empty(cls, geometry):
        return cls.explicit(geometry, np.zeros(geometry.shape, dtype=bool))

    @classmethod
    def full(cls, geometry):
        return cls.explicit(geometry, np.ones(geometry.shape, dtype=bool))

    def _resolve(self):
        g = self.geometry
        if self.kind == "ball":
            return g.mode_norms < self.radius
        if self.kind == "cube":
            mu = np.asarray(self.center)
            k = g.wavevectors
            plus = np.max(np.abs(k - mu), axis=-1) < self.half_width
            minus = np.max(np.abs(k + mu), axis=-1) < self.half_width
            return plus | minus
        return np.asarray(self.explicit_mask, dtype=bool).reshape(g.shape).copy()

    def is_symmetric(self):
        flat = self.mask.ravel()
        return bool(np.array_equal(flat, flat[self.geometry.negated.ravel()]))

    @property
    def contains_origin(self):
        return bool(self.mask.flat[0])

    @property
    def indices(self):
        return np.flatnonzero(self.mask)

    @property
    def nonzero_mask(self):
        m = self.mask.copy()
        m.flat[0] = False
        return m

    def touches_nyquist(self):
        g = self.geometry
        if g.n % 2:
            return False
        edge = np.any(g.mode_indices == -(g.n // 2), axis=-1)
        return bool(np.any(self.mask & edge))

    def describe(self):
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius}
        if self.kind == "cube":
            return {"kind": "cube", "center": list(self.center), "half_width": self.half_width}
        return {"kind": "explicit", "indices": self.indices.tolist()}

    @classmethod
    def from_description(cls, geometry, desc):
        kind = desc["kind"]
        if kind == "ball":
            return cls.ball(geometry, desc["radius"])
        if kind == "cube":
            return cls.shifted_cube(geometry, desc["center"], desc["half_width"])
        if kind == "explicit":
            return cls.explicit(geometry, np.asarray(desc["indices"], dtype=int))
        raise ValueError(f"unknown gap kind {kind!r}")


class Classification(NamedTuple):
    kind: str
    touches_nyquist: bool


class ConstraintCount(NamedTuple):
    modes: int
    real_constraints: int


@dataclass(frozen=True, eq=False)
class StructureFunction:
    geometry: TorusGeometry
    values: np.ndarray = field(repr=False)
    gap: GapRegion
    family: str = "explicit"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.geometry.shape)
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise PreconditionError("structure function must be finite and nonnegative")
        if np.any(v[self.gap.mask] != 0):
            raise PreconditionError("structure function must vanish exactly on the gap mask")
        flat = v.ravel()
        if not np.array_equal(flat, flat[self.geometry.negated.ravel()]):
            raise PreconditionError("structure function must satisfy S(-k) = S(k)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def scaled(self, factor):
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return StructureFunction(self.geometry, self.values * factor, self.gap,
                                 self.family, dict(self.parameters, scale=factor))

    def to_dict(self, include_values=None):
        g = self.geometry
        out = {
            "geometry": {"d": g.d, "n": g.n, "box_length": g.box_length},
            "family": self.family,
            "parameters": dict(self.parameters),
            "gap": self.gap.describe(),
        }
        if include_values or (include_values is None and self.family == "explicit"):
            out["values"] = self.values.ravel().tolist()
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc):
        g = TorusGeometry(**doc["geometry"])
        family = doc.get("family", "explicit")
        params = dict(doc.get("parameters", {}))
        scale = params.pop("scale", None)
        if "values" in doc or family == "explicit":
            gap = GapRegion.from_description(g, doc["gap"])
            S = cls(g, np.asarray(doc["values"], dtype=float), gap, family, params)
        else:
            S = FAMILIES[family](g, **params)
        return S.scaled(scale) if scale is not None else S

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- families

def stealthy_flat(geometry, b):
    """0 on the open ball ``|k| < b``, 1 elsewhere."""
    gap = GapRegion.ball(geometry, b)
    return StructureFunction(geometry, np.where(gap.mask, 0.0, 1.0), gap,
                             "stealthy_flat", {"b": float(b)})


def shifted_cube(geometry, center, half_width):
    """Generalized stealthy: 0 on a cube around ``+-center``, 1 elsewhere."""
    gap = GapRegion.shifted_cube(geometry, center, half_width)
    return StructureFunction(geometry, np.where(gap.mask, 0.0, 1.0), gap, "shifted_cube",
                             {"center": list(gap.center), "half_width": gap.half_width})


def flat(geometry):
    return StructureFunction(geometry, np.ones(geometry.shape), GapRegion.empty(geometry), "flat")


def zero(geometry):
    return StructureFunction(geometry, np.zeros(geometry.shape), GapRegion.full(geometry), "zero")


def hyperuniform_flat(geometry):
    """1 everywhere except ``S(0) = 0``."""
    gap = GapRegion.explicit(geometry, [0])
    v = np.ones(geometry.shape)
    v.flat[0] = 0.0
    return StructureFunction(geometry, v, gap, "hyperuniform_flat")


def bragg_lattice(geometry, period_sites):
    """Perfect lattice with ``period_sites`` sites per cell: nonzero only on reciprocal modes."""
    m = geometry.n // int(period_sites)
    if m * int(period_sites) != geometry.n:
        raise ValueError("period must divide n")
    on = np.all(geometry.mode_indices % m == 0, axis=-1)
    on.flat[0] = False
    gap = GapRegion.explicit(geometry, ~on)
    return StructureFunction(geometry, on.astype(float), gap, "bragg_lattice",
                             {"period_sites": int(period_sites)})


@dataclass(frozen=True)
class FastDecayProfile:
    """``S(k) = exp(-1/|k|^p)`` below ``cutoff`` and constant beyond it."""

    p: float = 1.0
    cutoff: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")

    def __call__(self, knorm):
        k = np.minimum(np.asarray(knorm, dtype=float), self.cutoff)
        out = np.zeros_like(k)
        pos = k > 0
        out[pos] = np.exp(-1.0 / k[pos] ** self.p)
        return out

    def on(self, geometry):
        v = self(geometry.mode_norms)
        gap = GapRegion.explicit(geometry, v == 0)
        return StructureFunction(geometry, v, gap, "fast_decay",
                                 {"p": self.p, "cutoff": self.cutoff})

    def polynomial_ratio(self, knorm, m):
        k = np.asarray(knorm, dtype=float)
        return self(k) / k ** m


def fast_decay(geometry, p=1.0, cutoff=1.0):
    return FastDecayProfile(p, cutoff).on(geometry)


def power_law(geometry, exponent=2.0):
    """``S(k) = |k|^exponent``: hyperuniform but not fast-decaying (negative control)."""
    v = geometry.mode_norms ** float(exponent)
    gap = GapRegion.explicit(geometry, v == 0)
    return StructureFunction(geometry, v, gap, "power_law", {"exponent": float(exponent)})


FAMILIES = {
    "stealthy_flat": stealthy_flat,
    "shifted_cube": shifted_cube,
    "flat": flat,
    "zero": zero,
    "hyperuniform_flat": hyperuniform_flat,
    "bragg_lattice": bragg_lattice,
    "fast_decay": fast_decay,
    "power_law": power_law,
}


# ---------------------------------------------------------------- operations

def _gap_of(obj):
    return obj.gap if isinstance(obj, StructureFunction) else obj


def gap_radius(obj):
    """Supremum of ``b`` such that every mode with ``|k| < b`` is masked.

    Equals the smallest norm among unmasked modes, or the Nyquist radius when
    every mode is masked.
    """
    gap = _gap_of(obj)
    if not gap.contains_origin:
        raise NotStealthyError("gap does not contain the origin")
    norms = gap.geometry.mode_norms[~gap.mask]
    if norms.size == 0:
        return gap.geometry.nyquist_radius
    return float(norms.min())


def count_constraints(gap):
    """Masked modes, and the real scalar constraints they impose on a real field.

    A conjugate pair ``{k, -k}`` carries two real constraints, a
    self-conjugate mode one.
    """
    gap = _gap_of(gap)
    flat = gap.mask.ravel()
    # constraining k also pins -k, so count the orbit {k, -k} member by member
    touched = flat | flat[gap.geometry.negated.ravel()]
    return ConstraintCount(int(flat.sum()), int(touched.sum()))


def classify(S):
    gap = S.gap
    g = S.geometry
    nonzero = gap.nonzero_mask
    if gap.contains_origin and np.any(nonzero):
        kmin = g.mode_spacing
        if gap_radius(gap) > kmin * (1 + 1e-12):
            kind = "stealthy"
        else:
            kind = "generalized_stealthy"
    elif np.any(nonzero):
        kind = "generalized_stealthy"
    elif S.values.flat[0] == 0:
        kind = "hyperuniform"
    else:
        kind = "none"
    return Classification(kind, gap.touches_nyquist())
