"""Projection of fractures onto voxel grids and fracture/matrix blending.

A fracture enters the grid as a disc of the same area as its square,
approximated by a regular polygon (32 vertices by default).  The fracture
volume inside a voxel (polygon area times aperture) divided by the voxel
volume is the blending weight of the fracture conductivity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .dfn import Box, Fracture
from .errors import ParameterError
from .fields import GridSpec, TensorGrid

DISC_VERTICES = 32
_IDENTITY_VOIGT = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class VoxelIntersection:
    voxel_index: tuple[int, int, int]
    area: float
    weight: float


@dataclass
class PlanarPolygon:
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.vertices)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


def polygon_area(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    rel = vertices - vertices[0]
    s = np.cross(rel[1:-1], rel[2:]).sum(axis=0)
    return 0.5 * float(np.linalg.norm(s))


def equivalent_disc_radius(size):
    """Radius of the disc with the same area as a square of edge ``size``."""
    return np.asarray(size) / math.sqrt(math.pi) if np.ndim(size) else size / math.sqrt(math.pi)


def disc_polygon(fracture: Fracture, n_vertices: int = DISC_VERTICES) -> np.ndarray:
    """Vertices (n, 3) of the regular polygon inscribed in the fracture's equivalent disc."""
    r = equivalent_disc_radius(fracture.size)
    theta = 2 * np.pi * np.arange(n_vertices) / n_vertices
    u, v = fracture.in_plane_axis, fracture.second_axis
    return fracture.center + r * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)


def _plane_coords(points: np.ndarray, fracture: Fracture) -> np.ndarray:
    rel = np.asarray(points) - fracture.center
    return np.stack([rel @ fracture.in_plane_axis, rel @ fracture.second_axis], axis=-1)


_CUBE_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]


def plane_box_polygon(fracture: Fracture, voxel: Box) -> PlanarPolygon:
    """Convex polygon where the (unbounded) fracture plane cuts an axis-aligned box."""
    lo, hi = np.asarray(voxel.lo), np.asarray(voxel.hi)
    corners = np.array([[hi[d] if (c >> d) & 1 else lo[d] for d in range(3)] for c in range(8)])
    dist = (corners - fracture.center) @ fracture.normal
    scale = float(np.abs(hi - lo).max())
    tol = 1e-12 * scale
    pts = [corners[i] for i in range(8) if abs(dist[i]) <= tol]
    for a, b in _CUBE_EDGES:
        da, db = dist[a], dist[b]
        if (da > tol and db < -tol) or (da < -tol and db > tol):
            pts.append(corners[a] + da / (da - db) * (corners[b] - corners[a]))
    if len(pts) < 3:
        return PlanarPolygon(np.empty((0, 3)))
    pts = np.unique(np.round(np.array(pts), 12), axis=0)
    if len(pts) < 3:
        return PlanarPolygon(np.empty((0, 3)))
    uv = _plane_coords(pts, fracture)
    c = uv.mean(axis=0)
    order = np.argsort(np.arctan2(uv[:, 1] - c[1], uv[:, 0] - c[0]))
    return PlanarPolygon(pts[order])


def _clip_convex_2d(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a counterclockwise convex polygon."""
    out = subject
    n = len(clipper)
    for i in range(n):
        if len(out) == 0:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a
        side = edge[0] * (out[:, 1] - a[1]) - edge[1] * (out[:, 0] - a[0])
        nxt, sn = np.roll(out, -1, axis=0), np.roll(side, -1)
        inside = side >= 0
        cross = ((side > 0) & (sn < 0)) | ((side < 0) & (sn > 0))
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(cross, side / (side - sn), 0.0)
        cut = out + t[:, None] * (nxt - out)
        out = np.stack([out, cut], axis=1).reshape(-1, 2)[np.stack([inside, cross], axis=1).reshape(-1)]
    return out


def _shoelace(p: np.ndarray) -> float:
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(x @ np.roll(y, -1) - y @ np.roll(x, -1)))


def disc_clip_area(polygon: PlanarPolygon, fracture: Fracture, n_vertices: int = DISC_VERTICES) -> float:
    """Area of the part of an in-plane polygon covered by the fracture's disc polygon."""
    if polygon.is_empty:
        return 0.0
    subject = _plane_coords(polygon.vertices, fracture)
    c = subject.mean(axis=0)
    subject = subject[np.argsort(np.arctan2(subject[:, 1] - c[1], subject[:, 0] - c[0]))]
    disc = _plane_coords(disc_polygon(fracture, n_vertices), fracture)
    return _shoelace(_clip_convex_2d(subject, disc))


def rasterize_arrays(fracture: Fracture, grid: GridSpec, n_vertices: int = DISC_VERTICES):
    """(flat C-order voxel index, in-voxel area, weight) for every voxel touched by the fracture."""
    poly = disc_polygon(fracture, n_vertices)
    idx, area = kernels.rasterize_polygon(poly, np.asarray(grid.origin, dtype=float),
                                         float(grid.cell), np.asarray(grid.dims, dtype=np.int64))
    weight = np.minimum(1.0, area * fracture.aperture / grid.cell**3)
    keep = weight > 0
    return idx[keep], area[keep], weight[keep]


def rasterize_fracture(fracture: Fracture, grid: GridSpec, n_vertices: int = DISC_VERTICES) -> list[VoxelIntersection]:
    idx, area, weight = rasterize_arrays(fracture, grid, n_vertices)
    ijk = np.stack(np.unravel_index(idx, grid.dims), axis=1)
    return [VoxelIntersection(tuple(int(v) for v in t), float(a), float(w))
            for t, a, w in zip(ijk, area, weight)]


def blend_conductivity(matrix_tensor, k_f: float, w: float) -> np.ndarray:
    """(1 - w) K_m + w k_f I in Voigt form."""
    if not 0.0 <= w <= 1.0:
        raise ParameterError("blending weight must be in [0, 1]")
    return (1.0 - w) * np.asarray(matrix_tensor, dtype=float) + w * k_f * _IDENTITY_VOIGT


def _touches(fracture: Fracture, box: Box) -> bool:
    r = equivalent_disc_radius(fracture.size)
    nearest = np.clip(fracture.center, box.lo, box.hi)
    if np.linalg.norm(nearest - fracture.center) > r:
        return False
    half = 0.5 * np.asarray(box.size)
    mid = np.asarray(box.lo) + half
    return abs((mid - fracture.center) @ fracture.normal) <= np.abs(fracture.normal) @ half


def fracture_weights(fractures: Sequence[Fracture], grid: GridSpec, n_vertices: int = DISC_VERTICES):
    """Per-voxel summed weights and weighted conductivity sums, accumulated in fracture order."""
    sum_w = np.zeros(grid.n_cells)
    sum_wk = np.zeros(grid.n_cells)
    box = grid.box
    for f in fractures:
        if not _touches(f, box):
            continue
        idx, _, w = rasterize_arrays(f, grid, n_vertices)
        sum_w[idx] += w
        sum_wk[idx] += w * f.conductivity
    return sum_w.reshape(grid.dims), sum_wk.reshape(grid.dims)


def voxelize_dfm(fractures: Sequence[Fracture], matrix_field: TensorGrid, grid: GridSpec | None = None,
                 n_vertices: int = DISC_VERTICES) -> TensorGrid:
    """Blend fracture conductivities into the matrix tensor field voxel by voxel."""
    grid = matrix_field.grid if grid is None else grid
    if not matrix_field.grid.matches(grid):
        raise ParameterError("matrix field grid does not match the target grid")
    sum_w, sum_wk = fracture_weights(fractures, grid, n_vertices)
    km = matrix_field.channels.astype(np.float64)
    if not sum_w.any():
        return TensorGrid(grid, km.copy())
    total = np.minimum(1.0, sum_w)
    k_frac = np.divide(sum_wk, sum_w, out=np.zeros_like(sum_w), where=sum_w > 0)
    out = (1.0 - total) * km + (total * k_frac) * _IDENTITY_VOIGT[:, None, None, None]
    return TensorGrid(grid, out)
