"""Equivalent conductivity tensors by block homogenization.

Each block is solved three times with linear boundary heads x, y and z.
The block-averaged gradients and velocities give a 9 x 6 least-squares
system for the six Voigt components of the equivalent tensor.  Blocks of
side 1.5 H are placed every half block over (0, L)^3 and their tensors form
a coarse field on the block-center lattice.
"""
from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from functools import partial
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .darcy import solve_anisotropy
from .dfn import Box, Fracture, filter_size_range
from .errors import ParameterError
from .fields import GridSpec, TensorGrid, matrix_to_voigt, restrict_field, voigt_to_matrix
from .voxelize import voxelize_dfm

# columns of the tensor entries multiplying g_x, g_y, g_z in row (x, y, z) of A^j
_LSQ_PATTERN = ((0, 5, 4), (5, 1, 3), (4, 3, 2))


@dataclass
class EquivalentTensor:
    voigt: np.ndarray
    rank: int = 6
    residual: float = 0.0
    projected: bool = False

    def __post_init__(self):
        self.voigt = np.asarray(self.voigt, dtype=float).reshape(6)

    def matrix(self) -> np.ndarray:
        return voigt_to_matrix(self.voigt)


@dataclass(frozen=True)
class LsqSystem:
    matrix: np.ndarray   # (9, 6)
    rhs: np.ndarray      # (9,)


@dataclass(frozen=True)
class BlockLayout:
    L: float
    H: float
    block_size: float
    spacing: float
    per_axis: int

    @property
    def n_blocks(self) -> int:
        return self.per_axis ** 3

    def axis_centers(self) -> np.ndarray:
        return self.spacing * np.arange(self.per_axis)

    def centers(self) -> np.ndarray:
        """Block centers (n_blocks, 3) in C order over the lattice indices."""
        c = self.axis_centers()
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)

    def block_box(self, center) -> Box:
        half = 0.5 * self.block_size
        center = np.asarray(center, dtype=float)
        return Box(tuple(center - half), tuple(center + half))

    @property
    def enlarged_box(self) -> Box:
        half = 0.5 * self.block_size
        return Box.cube(-half, self.L + half)

    def lattice_grid(self) -> GridSpec:
        """Grid whose cell centers are the block centers."""
        return GridSpec((-0.5 * self.spacing,) * 3, self.spacing, (self.per_axis,) * 3)


def block_centers(L: float, H: float) -> BlockLayout:
    if L <= 0 or H <= 0:
        raise ParameterError("L and H must be positive")
    l = 1.5 * H
    ratio = L / (0.5 * l)
    steps = round(ratio)
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise ParameterError(f"L={L} is not a positive multiple of the block spacing {0.5 * l}")
    return BlockLayout(float(L), float(H), l, 0.5 * l, steps + 1)


def weighted_average(cell_vectors, weights) -> np.ndarray:
    v = np.asarray(cell_vectors, dtype=float).reshape(-1, 3)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(v) != len(w):
        raise ParameterError("vectors and weights differ in length")
    if np.any(w < 0):
        raise ParameterError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ParameterError("total weight is zero")
    return w @ v / total


def assemble_lsq(avg_gradients, avg_velocities) -> LsqSystem:
    """Stack the three averaged responses into the system -A k = u."""
    g = np.asarray(avg_gradients, dtype=float).reshape(3, 3)
    u = np.asarray(avg_velocities, dtype=float).reshape(3, 3)
    A = np.zeros((9, 6))
    for j in range(3):
        for row in range(3):
            for comp in range(3):
                A[3 * j + row, _LSQ_PATTERN[row][comp]] += g[j, comp]
    return LsqSystem(A, u.reshape(9))


def solve_lsq(system: LsqSystem) -> EquivalentTensor:
    A = -np.asarray(system.matrix, dtype=float)
    b = np.asarray(system.rhs, dtype=float)
    k, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.linalg.norm(A @ k - b))
    if rank < 6:
        warnings.warn(f"least-squares system has rank {rank} < 6", RuntimeWarning, stacklevel=2)
    return EquivalentTensor(k, int(rank), res)


def project_spd(voigt, floor_rel: float = 1e-12):
    """Symmetric eigenvalue clipping at floor_rel * trace. Returns (voigt, changed)."""
    m = voigt_to_matrix(np.asarray(voigt, dtype=float))
    w, q = np.linalg.eigh(m)
    floor = floor_rel * max(float(np.trace(m)), 0.0)
    if floor == 0.0:
        floor = floor_rel * float(np.abs(w).max(initial=0.0))
    if w.min() > floor:
        return np.asarray(voigt, dtype=float), False
    w = np.maximum(w, floor)
    return matrix_to_voigt((q * w) @ q.T), True


def _project_spd_field(channels: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    m = voigt_to_matrix(np.moveaxis(channels, 0, -1))
    w, q = np.linalg.eigh(m)
    floor = floor_rel * np.clip(np.trace(m, axis1=-2, axis2=-1), 0.0, None)
    bad = w.min(axis=-1) <= floor
    if not bad.any():
        return channels
    w = np.maximum(w, floor[..., None])
    fixed = np.einsum("...ij,...j,...kj->...ik", q, w, q)
    m[bad] = fixed[bad]
    return np.moveaxis(matrix_to_voigt(m), -1, 0)


def homogenize_block(field_block: TensorGrid, **solver_kw) -> EquivalentTensor:
    sols = solve_anisotropy(field_block, **solver_kw)
    # equal cell volumes and one matrix "aperture" per voxel: the weighted average is the plain mean
    grads = np.array([s.mean_gradient() for s in sols])
    vels = np.array([s.mean_velocity() for s in sols])
    eq = solve_lsq(assemble_lsq(grads, vels))
    voigt, changed = project_spd(eq.voigt)
    return EquivalentTensor(voigt, eq.rank, eq.residual, changed)


class Surrogate(Protocol):
    def predict_fields(self, fields: Sequence[TensorGrid], baselines: Sequence[float]) -> np.ndarray:
        ...


@dataclass
class UpscaleReport:
    layout: BlockLayout
    backend: str
    values: np.ndarray                      # (n_blocks, 6)
    timing: dict = dc_field(default_factory=dict)
    projected: int = 0

    def write_csv(self, path) -> None:
        write_block_csv(path, self.layout.centers(), self.values)


def write_block_csv(path, centers, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "k_xx", "k_yy", "k_zz", "k_yz", "k_xz", "k_xy"])
        for c, v in zip(np.asarray(centers), np.asarray(values)):
            w.writerow([repr(float(x)) for x in c] + [repr(float(x)) for x in v])


def _block_resolution(field: TensorGrid, layout: BlockLayout) -> int:
    n = layout.block_size / field.grid.cell
    res = round(n)
    if abs(n - res) > 1e-6 or res % 2:
        raise ParameterError(f"field cell {field.grid.cell} does not split the block size "
                             f"{layout.block_size} into an even number of voxels")
    return res


def _prepare_block(args):
    fractures, matrix_field, box = args
    local = restrict_field(matrix_field, box)
    baseline = float(local.channels.astype(np.float64).mean())
    return voxelize_dfm(fractures, local), baseline


def _solve_block(block, tol=1e-10):
    return homogenize_block(block, tol=tol)


def homogenize_domain(fractures: Sequence[Fracture], matrix_field: TensorGrid, L: float, H: float,
                      h_cutoff: float, backend: str = "numerical", surrogate: Optional[Surrogate] = None,
                      workers: int = 1, tol: float = 1e-10):
    """Upscale a DFM sample defined on the enlarged domain (-l/2, L + l/2)^3.

    Returns (CoarseField as a TensorGrid on the block lattice, UpscaleReport).
    """
    if backend not in ("numerical", "surrogate"):
        raise ParameterError(f"unknown backend {backend!r}")
    if backend == "surrogate" and surrogate is None:
        raise ParameterError("surrogate backend requires a loaded model")
    layout = block_centers(L, H)
    _block_resolution(matrix_field, layout)
    selected = filter_size_range(fractures, h_cutoff, H)
    timing = {"voxelize": 0.0, "solve": 0.0, "inference": 0.0}
    t0 = time.perf_counter()

    jobs = [(selected, matrix_field, layout.block_box(c)) for c in layout.centers()]
    tic = time.perf_counter()
    prepared = _map(_prepare_block, jobs, workers)
    timing["voxelize"] = time.perf_counter() - tic
    blocks = [p[0] for p in prepared]
    baselines = [p[1] for p in prepared]

    tic = time.perf_counter()
    projected = 0
    if backend == "numerical":
        eqs = _map(partial(_solve_block, tol=tol), blocks, workers)
        values = np.array([e.voigt for e in eqs])
        projected = sum(e.projected for e in eqs)
        timing["solve"] = time.perf_counter() - tic
    else:
        values = np.asarray(surrogate.predict_fields(blocks, baselines), dtype=float).reshape(-1, 6)
        fixed = [project_spd(v) for v in values]
        values = np.array([f[0] for f in fixed])
        projected = sum(f[1] for f in fixed)
        timing["inference"] = time.perf_counter() - tic
    timing["total"] = time.perf_counter() - t0

    n = layout.per_axis
    chan = np.moveaxis(values.reshape(n, n, n, 6), -1, 0).copy()
    coarse = TensorGrid(layout.lattice_grid(), chan)
    return coarse, UpscaleReport(layout, backend, values, timing, projected)


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def interpolate_coarse(coarse: TensorGrid, target: GridSpec) -> TensorGrid:
    """Trilinear interpolation of the six channels at the target cell centers."""
    axes = [coarse.grid.axis_centers(a) for a in range(3)]
    pts = target.cell_centers().reshape(-1, 3)
    for a in range(3):
        span = axes[a][-1] - axes[a][0]
        tol = 1e-9 * max(span, coarse.grid.cell)
        if pts[:, a].min() < axes[a][0] - tol or pts[:, a].max() > axes[a][-1] + tol:
            raise ParameterError("target grid extends beyond the coarse lattice (extrapolation)")
        pts[:, a] = np.clip(pts[:, a], axes[a][0], axes[a][-1])
    out = np.empty((6,) + target.dims)
    for c in range(6):
        data = coarse.channels[c].astype(np.float64)
        if any(len(ax) == 1 for ax in axes):
            # degenerate axes: keep only the varying ones
            keep = [a for a in range(3) if len(axes[a]) > 1]
            sq = data.reshape([len(axes[a]) for a in keep]) if keep else data.reshape(())
            if not keep:
                out[c] = float(sq)
                continue
            interp = RegularGridInterpolator([axes[a] for a in keep], sq)
            out[c] = interp(pts[:, keep]).reshape(target.dims)
        else:
            out[c] = RegularGridInterpolator(axes, data)(pts).reshape(target.dims)
    return TensorGrid(target, _project_spd_field(out))


def coarse_lattice_target(layout: BlockLayout, n: int) -> GridSpec:
    """Regular n^3 grid over the hull of the block centers."""
    if n < 1:
        raise ParameterError("n must be positive")
    return GridSpec((0.0,) * 3, layout.L / n, (n,) * 3)


__all__ = ["EquivalentTensor", "LsqSystem", "BlockLayout", "UpscaleReport", "block_centers",
           "weighted_average", "assemble_lsq", "solve_lsq", "project_spd", "homogenize_block",
           "homogenize_domain", "interpolate_coarse", "write_block_csv", "coarse_lattice_target"]
