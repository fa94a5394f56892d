"""Regular grids, correlated Gaussian fields and tensor-valued conductivity fields."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dfn import Box
from .errors import EmbeddingError, FormatError, ParameterError, VersionError

# Voigt order used everywhere: xx, yy, zz, yz, xz, xy
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
DIAGONAL = np.array([True, True, True, False, False, False])
COMPONENT_NAMES = ("k_xx", "k_yy", "k_zz", "k_yz", "k_xz", "k_xy")
_VOIGT_INDEX = {p: c for c, (i, j) in enumerate(VOIGT_PAIRS) for p in ((i, j), (j, i))}


def voigt_index(i: int, j: int) -> int:
    """Voigt channel holding tensor entry (i, j)."""
    return _VOIGT_INDEX[(i, j)]


def voigt_to_matrix(v) -> np.ndarray:
    """(..., 6) Voigt vectors to (..., 3, 3) symmetric matrices."""
    v = np.asarray(v)
    m = np.empty(v.shape[:-1] + (3, 3), dtype=v.dtype)
    for c, (i, j) in enumerate(VOIGT_PAIRS):
        m[..., i, j] = v[..., c]
        m[..., j, i] = v[..., c]
    return m


def matrix_to_voigt(m) -> np.ndarray:
    m = np.asarray(m)
    return np.stack([0.5 * (m[..., i, j] + m[..., j, i]) for i, j in VOIGT_PAIRS], axis=-1)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    cell: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not self.cell > 0:
            raise ParameterError("cell size must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ParameterError(f"invalid grid dims {self.dims}")

    @classmethod
    def cube(cls, lo: float, side: float, n: int) -> "GridSpec":
        return cls((lo, lo, lo), side / n, (n, n, n))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def box(self) -> Box:
        lo = np.asarray(self.origin)
        return Box(tuple(lo), tuple(lo + self.cell * np.asarray(self.dims)))

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.cell * (np.arange(self.dims[axis]) + 0.5)

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) array of cell-center coordinates."""
        return np.stack(np.meshgrid(*(self.axis_centers(a) for a in range(3)), indexing="ij"), axis=-1)

    def shifted(self, shift) -> "GridSpec":
        return GridSpec(tuple(np.add(self.origin, shift)), self.cell, self.dims)

    def matches(self, other: "GridSpec", tol: float = 1e-9) -> bool:
        return (self.dims == other.dims and abs(self.cell - other.cell) <= tol * self.cell
                and np.allclose(self.origin, other.origin, rtol=0, atol=tol * self.cell))


@dataclass(frozen=True)
class CovarianceSpec:
    corr_len: float = 0.0
    model: str = "gaussian"

    def __post_init__(self):
        if self.corr_len < 0:
            raise ParameterError("correlation length must be >= 0")
        if self.model != "gaussian":
            raise ParameterError(f"unsupported covariance model {self.model!r}")

    def correlation(self, r):
        if self.corr_len == 0:
            return np.where(np.asarray(r) == 0, 1.0, 0.0)
        return np.exp(-(np.asarray(r) / self.corr_len) ** 2)


@dataclass(frozen=True)
class TensorFieldParams:
    mu: tuple[float, float, float]
    sigma: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sig = np.asarray(self.sigma, dtype=float)
        if mu.shape != (3,) or sig.shape != (3, 3):
            raise ParameterError("mu must be a 3-vector and sigma a 3x3 matrix")
        if not np.allclose(sig, sig.T, rtol=0, atol=1e-14):
            raise ParameterError("sigma must be symmetric")
        object.__setattr__(self, "mu", tuple(mu))
        object.__setattr__(self, "sigma", tuple(map(tuple, sig)))

    def cholesky(self) -> np.ndarray:
        return psd_cholesky(np.asarray(self.sigma))


# Log-conductivity covariance shared by the three training datasets.
DATASET_SIGMA = ((0.25, 0.2, 0.2), (0.2, 0.25, 0.2), (0.2, 0.2, 0.25))
DATASET_MU = {
    "A": (-4.0, -3.8, -3.9),
    "B": (-6.0, -5.8, -5.9),
    "C": (-8.0, -7.8, -7.9),
}
DATASET_KF_KM = {"A": 1e3, "B": 1e5, "C": 1e7}


def dataset_params(name: str) -> TensorFieldParams:
    return TensorFieldParams(DATASET_MU[name], DATASET_SIGMA)


def psd_cholesky(s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = s for a symmetric PSD (possibly singular) matrix."""
    s = np.asarray(s, dtype=float)
    scale = max(np.abs(s).max(), 1.0)
    if np.linalg.eigvalsh(s).min() < -tol * scale:
        raise ParameterError("covariance matrix is not positive semi-definite")
    n = s.shape[0]
    low = np.zeros_like(s)
    for j in range(n):
        d = s[j, j] - low[j, :j] @ low[j, :j]
        if d <= tol * scale:
            continue
        low[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            low[i, j] = (s[i, j] - low[i, :j] @ low[j, :j]) / low[j, j]
    return low


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.dims:
            raise ParameterError(f"values shape {self.values.shape} != grid dims {self.grid.dims}")


@dataclass
class TensorGrid:
    """Symmetric conductivity tensors on a voxel grid, stored as (6, nx, ny, nz) Voigt channels."""

    grid: GridSpec
    channels: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels)
        if self.channels.shape != (6,) + self.grid.dims:
            raise ParameterError(f"channels shape {self.channels.shape} != (6,)+{self.grid.dims}")

    @classmethod
    def constant(cls, grid: GridSpec, voigt) -> "TensorGrid":
        v = np.asarray(voigt, dtype=float).reshape(6, 1, 1, 1)
        return cls(grid, np.broadcast_to(v, (6,) + grid.dims).copy())

    @classmethod
    def from_tensors(cls, grid: GridSpec, tensors: np.ndarray) -> "TensorGrid":
        return cls(grid, np.moveaxis(matrix_to_voigt(tensors), -1, 0).copy())

    def tensors(self) -> np.ndarray:
        """(nx, ny, nz, 3, 3) float64 tensors."""
        return voigt_to_matrix(np.moveaxis(self.channels.astype(np.float64), 0, -1))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.tensors().reshape(-1, 3, 3)).min())

    def is_spd(self) -> bool:
        try:
            np.linalg.cholesky(self.tensors().reshape(-1, 3, 3))
        except np.linalg.LinAlgError:
            return False
        return True

    def scaled(self, c: float) -> "TensorGrid":
        return TensorGrid(self.grid, self.channels * c)

    def copy(self) -> "TensorGrid":
        return TensorGrid(self.grid, self.channels.copy())


# ------------------------------------------------------------- Gaussian fields

def _torus_length(n: int, cell: float, corr_len: float) -> int:
    # >= 2(n-1) so the circulant contains the Toeplitz block, plus >= 3 correlation lengths
    return max(2 * (n - 1), n + int(math.ceil(3.0 * corr_len / cell)), 2)


@lru_cache(maxsize=64)
def _axis_factor(n: int, cell: float, corr_len: float, max_len: int = 1 << 16) -> np.ndarray:
    """n x n factor B with B B^T equal to the 1D correlation matrix along one axis.

    The factor is read off the square root of a circulant embedding of the
    1D correlation function; the torus is lengthened until its spectrum is
    non-negative up to 1e-10 relative.
    """
    m = _torus_length(n, cell, corr_len)
    while True:
        j = np.arange(m)
        lag = np.minimum(j, m - j) * cell
        spectrum = np.fft.fft(np.exp(-(lag / corr_len) ** 2)).real
        smax = spectrum.max()
        if spectrum.min() >= -1e-10 * smax:
            break
        if m >= max_len:
            raise EmbeddingError(
                f"circulant embedding not PSD: min eigenvalue {spectrum.min():.3e} "
                f"(max {smax:.3e}) at torus length {m} for n={n}, corr_len/cell={corr_len / cell:.3g}")
        m = int(math.ceil(m * 1.5))
    root = np.fft.ifft(np.sqrt(np.clip(spectrum, 0.0, None))).real
    rows = root[(np.arange(m)[None, :] - np.arange(n)[:, None]) % m]
    u, s, _ = np.linalg.svd(rows, full_matrices=False)
    factor = u * s
    factor.flags.writeable = False
    return factor


def sample_gaussian_field(rng: np.random.Generator, grid: GridSpec, cov: CovarianceSpec) -> ScalarField:
    """Zero-mean unit-variance field with correlation exp(-(r/corr_len)^2)."""
    white = rng.standard_normal(grid.dims)
    if cov.corr_len == 0:
        return ScalarField(grid, white)
    z = white
    for axis in range(3):
        b = _axis_factor(grid.dims[axis], grid.cell, float(cov.corr_len))
        z = np.moveaxis(np.tensordot(b, z, axes=([1], [axis])), 0, axis)
    return ScalarField(grid, z)


# ------------------------------------------------------------- rotations

def build_rotation(n_raw, r_raw) -> np.ndarray:
    """Rotation Q = Q_N Q_R; vectorized over leading axes of n_raw (..., 3) and r_raw (..., 2)."""
    n_raw = np.asarray(n_raw, dtype=float)
    r_raw = np.asarray(r_raw, dtype=float)
    n_norm = np.linalg.norm(n_raw, axis=-1, keepdims=True)
    r_norm = np.linalg.norm(r_raw, axis=-1, keepdims=True)
    if np.any(n_norm == 0) or np.any(r_norm == 0):
        raise ParameterError("rotation generators must be non-zero")
    a, b, c = np.moveaxis(n_raw / n_norm, -1, 0)
    phi = np.arctan2(r_raw[..., 1], r_raw[..., 0])

    antipodal = c < -1.0 + 1e-9
    inv = 1.0 / np.where(antipodal, 1.0, 1.0 + c)
    qn = np.empty(a.shape + (3, 3))
    qn[..., 0, 0] = 1.0 - a * a * inv
    qn[..., 0, 1] = -a * b * inv
    qn[..., 0, 2] = a
    qn[..., 1, 0] = -a * b * inv
    qn[..., 1, 1] = 1.0 - b * b * inv
    qn[..., 1, 2] = b
    qn[..., 2, 0] = -a
    qn[..., 2, 1] = -b
    qn[..., 2, 2] = c
    if np.any(antipodal):
        qn[antipodal] = np.diag([1.0, -1.0, -1.0])

    cp, sp = np.cos(phi), np.sin(phi)
    qr = np.zeros(phi.shape + (3, 3))
    qr[..., 0, 0] = cp
    qr[..., 0, 1] = -sp
    qr[..., 1, 0] = sp
    qr[..., 1, 1] = cp
    qr[..., 2, 2] = 1.0
    return qn @ qr


def sample_conductivity_tensor_field(rng: np.random.Generator, grid: GridSpec, cov: CovarianceSpec,
                                     params: TensorFieldParams) -> TensorGrid:
    """K = Q^T diag(exp(mu + L k)) Q from eight independent correlated N(0,1) fields."""
    low = params.cholesky()
    names = ("R_x", "R_y", "N_x", "N_y", "N_z", "k_x", "k_y", "k_z")
    raw = {nm: sample_gaussian_field(rng, grid, cov).values for nm in names}
    r_raw = np.stack([raw["R_x"], raw["R_y"]], axis=-1)
    n_raw = np.stack([raw["N_x"], raw["N_y"], raw["N_z"]], axis=-1)
    k_raw = np.stack([raw["k_x"], raw["k_y"], raw["k_z"]], axis=-1)
    principal = np.exp(np.asarray(params.mu) + k_raw @ low.T)
    q = build_rotation(n_raw, r_raw)
    k = np.einsum("...ji,...j,...jk->...ik", q, principal, q)
    return TensorGrid.from_tensors(grid, k)


# ------------------------------------------------------------- restriction

def _voxel_offsets(grid: GridSpec, box: Box) -> tuple[np.ndarray, np.ndarray]:
    lo = (np.asarray(box.lo) - grid.origin) / grid.cell
    hi = (np.asarray(box.hi) - grid.origin) / grid.cell
    ilo, ihi = np.rint(lo).astype(int), np.rint(hi).astype(int)
    if np.abs(lo - ilo).max() > 1e-6 or np.abs(hi - ihi).max() > 1e-6:
        raise ParameterError(f"box {box} is not aligned with the voxel grid")
    if np.any(ilo < 0) or np.any(ihi > np.asarray(grid.dims)):
        raise ParameterError(f"box {box} exceeds the field extent {grid.box}")
    return ilo, ihi


def restrict_field(field: TensorGrid, box: Box) -> TensorGrid:
    ilo, ihi = _voxel_offsets(field.grid, box)
    sub = field.channels[:, ilo[0]:ihi[0], ilo[1]:ihi[1], ilo[2]:ihi[2]].copy()
    origin = tuple(np.asarray(field.grid.origin) + ilo * field.grid.cell)
    return TensorGrid(GridSpec(origin, field.grid.cell, tuple(ihi - ilo)), sub)


# ------------------------------------------------------------- binary I/O

_TG_HEADER = struct.Struct("<4sI3I3dd")
_VERSION = 1


def _pack_grid(magic: bytes, grid: GridSpec) -> bytes:
    return _TG_HEADER.pack(magic, _VERSION, *grid.dims, *grid.origin, grid.cell)


def _unpack_grid(buf: bytes, magic: bytes) -> tuple[GridSpec, int]:
    if len(buf) < _TG_HEADER.size:
        raise FormatError("truncated grid header")
    mg, version, nx, ny, nz, ox, oy, oz, cell = _TG_HEADER.unpack_from(buf)
    if mg != magic:
        raise FormatError(f"bad magic {mg!r}, expected {magic!r}")
    if version != _VERSION:
        raise VersionError(f"unsupported grid format version {version}")
    return GridSpec((ox, oy, oz), cell, (nx, ny, nz)), _TG_HEADER.size


def tensor_grid_to_bytes(field: TensorGrid) -> bytes:
    body = np.stack([c.ravel(order="F") for c in field.channels]).astype("<f4")
    return _pack_grid(b"TGRD", field.grid) + body.tobytes()


def tensor_grid_from_bytes(buf: bytes) -> tuple[TensorGrid, int]:
    """Decode a TGRD payload; returns the field and the number of bytes consumed."""
    grid, off = _unpack_grid(buf, b"TGRD")
    n = grid.n_cells * 6
    end = off + 4 * n
    if len(buf) < end:
        raise FormatError("truncated TGRD payload")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(6, -1)
    channels = np.stack([c.reshape(grid.dims, order="F") for c in data]).astype(np.float32)
    return TensorGrid(grid, channels), end


def write_tensor_grid(field: TensorGrid, path) -> None:
    Path(path).write_bytes(tensor_grid_to_bytes(field))


def read_tensor_grid(path) -> TensorGrid:
    buf = Path(path).read_bytes()
    field, end = tensor_grid_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes")
    return field


def write_scalar_field(field: ScalarField, path) -> None:
    body = field.values.ravel(order="F").astype("<f4")
    Path(path).write_bytes(_pack_grid(b"SFLD", field.grid) + body.tobytes())


def read_scalar_field(path) -> ScalarField:
    buf = Path(path).read_bytes()
    grid, off = _unpack_grid(buf, b"SFLD")
    if len(buf) != off + 4 * grid.n_cells:
        raise FormatError(f"{path}: payload length mismatch")
    vals = np.frombuffer(buf, dtype="<f4", offset=off).reshape(grid.dims, order="F")
    return ScalarField(grid, vals.astype(np.float32))
