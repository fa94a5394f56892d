"""Stochastic discrete fracture networks.

Fractures are planar squares (edge length ``size``) with a pole drawn from a
Fisher distribution, a power-law size, an aperture linear in the size and an
isotropic conductivity given by the cubic law.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ParameterError


@dataclass(frozen=True)
class PhysicalConstants:
    g: float = 9.81
    rho_w: float = 1000.0
    mu: float = 1e-3

    def __post_init__(self):
        if not (self.g > 0 and self.rho_w > 0 and self.mu > 0):
            raise ParameterError("physical constants must be strictly positive")


@dataclass(frozen=True)
class FractureSetSpec:
    name: str
    trend: float
    plunge: float
    concentration: float
    p30: float

    def __post_init__(self):
        if not 0.0 <= self.plunge <= 90.0:
            raise ParameterError(f"set {self.name}: plunge must be in [0, 90]")
        if self.concentration < 0:
            raise ParameterError(f"set {self.name}: concentration must be >= 0")
        if self.p30 < 0:
            raise ParameterError(f"set {self.name}: p30 must be >= 0")


@dataclass(frozen=True)
class DfnSpec:
    sets: tuple[FractureSetSpec, ...]
    alpha: float = 2.0
    r_lo: float = 5.0
    r_hi: float = 100.0
    aperture_coeff: float = 1e-4
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    # multiplies the cubic-law conductivity; used to realize a K_f/K_m class
    conductivity_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        if not self.r_hi > self.r_lo > 0:
            raise ParameterError("size bounds must satisfy r_hi > r_lo > 0")
        if not self.alpha > 1:
            raise ParameterError("power-law exponent must be > 1")
        if not self.aperture_coeff > 0:
            raise ParameterError("aperture coefficient must be > 0")
        if not self.conductivity_scale > 0:
            raise ParameterError("conductivity scale must be > 0")

    @property
    def total_p30(self) -> float:
        return float(sum(s.p30 for s in self.sets))

    def with_total_p30(self, p30: float) -> "DfnSpec":
        """Rescale every set intensity so that the intensities sum to ``p30``."""
        total = self.total_p30
        if total <= 0:
            raise ParameterError("cannot rescale a DFN spec with zero intensity")
        sets = tuple(
            FractureSetSpec(s.name, s.trend, s.plunge, s.concentration, s.p30 * p30 / total)
            for s in self.sets
        )
        return DfnSpec(sets, self.alpha, self.r_lo, self.r_hi, self.aperture_coeff,
                       self.constants, self.conductivity_scale)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "DfnSpec":
        d = dict(d)
        sets = tuple(FractureSetSpec(**s) for s in d.pop("sets"))
        consts = PhysicalConstants(**d.pop("constants", {}))
        return cls(sets=sets, constants=consts, **d)


# Orientation sets of the training DFN (trend, plunge, Fisher concentration, P30 for r0=1).
TRAINING_SETS = (
    FractureSetSpec("NS", 292.0, 1.0, 17.8, 0.0196),
    FractureSetSpec("NE", 326.0, 2.0, 14.3, 0.0427),
    FractureSetSpec("NW", 60.0, 6.0, 12.9, 0.0348),
    FractureSetSpec("EW", 15.0, 2.0, 14.0, 0.0138),
    FractureSetSpec("HZ", 5.0, 86.0, 15.2, 0.0247),
)


def training_dfn_spec(**kwargs) -> DfnSpec:
    return DfnSpec(sets=TRAINING_SETS, **kwargs)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or not all(h > l for l, h in zip(lo, hi)):
            raise ParameterError(f"invalid box {lo} - {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float) -> "Box":
        return cls((lo, lo, lo), (hi, hi, hi))

    @property
    def size(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))


@dataclass(frozen=True)
class Fracture:
    center: np.ndarray
    normal: np.ndarray
    in_plane_axis: np.ndarray
    size: float
    aperture: float
    conductivity: float

    def __post_init__(self):
        for name in ("center", "normal", "in_plane_axis"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if abs(np.linalg.norm(self.normal) - 1) > 1e-12 or abs(np.linalg.norm(self.in_plane_axis) - 1) > 1e-12:
            raise ParameterError("fracture axes must be unit vectors")
        if abs(self.normal @ self.in_plane_axis) > 1e-12:
            raise ParameterError("in-plane axis must be orthogonal to the normal")
        if not (self.size > 0 and self.aperture > 0 and self.conductivity > 0):
            raise ParameterError("fracture size, aperture and conductivity must be positive")

    @property
    def second_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.in_plane_axis)

    def translated(self, shift) -> "Fracture":
        return Fracture(self.center + np.asarray(shift, float), self.normal, self.in_plane_axis,
                        self.size, self.aperture, self.conductivity)


def sample_power_law(rng: np.random.Generator, alpha: float, r_lo: float, r_hi: float, size=None):
    """Draw sizes with density proportional to r**-alpha on [r_lo, r_hi) by CDF inversion."""
    if not r_hi > r_lo > 0:
        raise ParameterError("size bounds must satisfy r_hi > r_lo > 0")
    if alpha == 1:
        raise ParameterError("alpha == 1 is not supported")
    return power_law_quantile(rng.random(size), alpha, r_lo, r_hi)


def power_law_quantile(u, alpha, r_lo, r_hi):
    e = 1.0 - alpha
    a, b = r_lo**e, r_hi**e
    return (a - np.asarray(u) * (a - b)) ** (1.0 / e)


def power_law_cdf(r, alpha, r_lo, r_hi):
    e = 1.0 - alpha
    a, b = r_lo**e, r_hi**e
    return (a - np.asarray(r, dtype=float) ** e) / (a - b)


def trend_plunge_to_vector(trend_deg: float, plunge_deg: float) -> np.ndarray:
    """Pole vector; trend counterclockwise from +x, plunge downward from horizontal."""
    t, p = math.radians(trend_deg), math.radians(plunge_deg)
    return np.array([math.cos(p) * math.cos(t), math.cos(p) * math.sin(t), -math.sin(p)])


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``axis`` to a right-handed orthonormal frame."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def sample_fisher_direction(rng: np.random.Generator, mean_dir, kappa: float, size=None) -> np.ndarray:
    """Directions from the Fisher distribution about ``mean_dir``.

    Returns shape (3,) when ``size`` is None, else (size, 3).
    """
    mean_dir = np.asarray(mean_dir, dtype=float)
    if abs(np.linalg.norm(mean_dir) - 1) > 1e-9:
        raise ParameterError("mean direction must be a unit vector")
    if kappa < 0:
        raise ParameterError("concentration must be >= 0")
    n = 1 if size is None else int(size)
    u = rng.random(n)
    phi = 2 * np.pi * rng.random(n)
    if kappa == 0:
        cos_t = 1.0 - 2.0 * u
    else:
        cos_t = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    cos_t = np.clip(cos_t, -1.0, 1.0)
    sin_t = np.sqrt(1.0 - cos_t**2)
    e1, e2 = _frame(mean_dir)
    v = (cos_t[:, None] * mean_dir + (sin_t * np.cos(phi))[:, None] * e1
         + (sin_t * np.sin(phi))[:, None] * e2)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v[0] if size is None else v


def cubic_law(aperture, constants: PhysicalConstants = PhysicalConstants()):
    a = np.asarray(aperture, dtype=float)
    if np.any(a < 0):
        raise ParameterError("aperture must be non-negative")
    return constants.g * constants.rho_w * a**2 / (12.0 * constants.mu)


def _set_rng(rng: np.random.Generator, n_sets: int) -> list[np.random.Generator]:
    seeds = rng.integers(0, 2**63 - 1, size=2)
    return [np.random.default_rng([int(seeds[0]), int(seeds[1]), i]) for i in range(n_sets)]


def generate_dfn(rng: np.random.Generator, spec: DfnSpec, domain: Box) -> list[Fracture]:
    """Poisson-placed fractures for every set of ``spec`` inside ``domain``."""
    lo, ext = np.asarray(domain.lo), domain.size
    out: list[Fracture] = []
    for fset, srng in zip(spec.sets, _set_rng(rng, len(spec.sets))):
        count = int(srng.poisson(fset.p30 * domain.volume)) if fset.p30 > 0 else 0
        if count == 0:
            continue
        centers = lo + srng.random((count, 3)) * ext
        sizes = sample_power_law(srng, spec.alpha, spec.r_lo, spec.r_hi, count)
        pole = trend_plunge_to_vector(fset.trend, fset.plunge)
        normals = sample_fisher_direction(srng, pole, fset.concentration, count)
        azimuth = 2 * np.pi * srng.random(count)
        apertures = spec.aperture_coeff * sizes
        conds = cubic_law(apertures, spec.constants) * spec.conductivity_scale
        for c, n, s, az, ap, k in zip(centers, normals, sizes, azimuth, apertures, conds):
            e1, e2 = _frame(n)
            axis = math.cos(az) * e1 + math.sin(az) * e2
            axis -= (axis @ n) * n
            axis /= np.linalg.norm(axis)
            out.append(Fracture(c, n, axis, float(s), float(ap), float(k)))
    return out


def filter_size_range(fractures: Iterable[Fracture], s_lo: float, s_hi: float) -> list[Fracture]:
    """Fractures with ``s_lo < size <= s_hi`` in input order."""
    if not s_hi > s_lo >= 0:
        raise ParameterError("size range must satisfy s_hi > s_lo >= 0")
    return [f for f in fractures if s_lo < f.size <= s_hi]


# ---------------------------------------------------------------- text format

_HEADER = "# dfmup-fractures"


def write_fractures(fractures: Sequence[Fracture], path, spec_hash: str = "none") -> None:
    lines = [f"{_HEADER} count={len(fractures)} spec={spec_hash}"]
    for f in fractures:
        vals = [*f.center, *f.normal, *f.in_plane_axis, f.size, f.aperture, f.conductivity]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_fractures(path) -> tuple[list[Fracture], str]:
    """Return the fractures of a fracture text file and the spec hash from its header."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(_HEADER):
        raise FormatError(f"{path}: missing fracture header")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(_HEADER):].split())
    try:
        count = int(fields["count"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: bad header {lines[0]!r}") from None
    records = [ln for ln in lines[1:] if ln.strip()]
    if len(records) != count:
        raise FormatError(f"{path}: header announces {count} fractures, found {len(records)}")
    out = []
    for lineno, rec in enumerate(records, start=2):
        try:
            v = [float(x) for x in rec.split()]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
        if len(v) != 12:
            raise FormatError(f"{path}:{lineno}: expected 12 values, got {len(v)}")
        out.append(Fracture(v[0:3], v[3:6], v[6:9], v[9], v[10], v[11]))
    return out, fields.get("spec", "none")
