import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfmup.dfn import Box, Fracture, cubic_law
from dfmup.errors import ParameterError
from dfmup.fields import CovarianceSpec, GridSpec, TensorGrid, dataset_params, sample_conductivity_tensor_field
from dfmup.voxelize import (PlanarPolygon, blend_conductivity, disc_clip_area, disc_polygon,
                            equivalent_disc_radius, plane_box_polygon, polygon_area, rasterize_arrays,
                            rasterize_fracture, voxelize_dfm)

POLYGON32 = 0.5 * 32 * math.sin(2 * math.pi / 32)      # area of the inscribed 32-gon of a unit disc


def frac(center, normal, size, aperture=None, k=1.0, axis=None):
    n = np.asarray(normal, float)
    n /= np.linalg.norm(n)
    if axis is None:
        helper = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
        axis = np.cross(n, helper)
    axis = np.asarray(axis, float)
    axis = axis - (axis @ n) * n
    axis /= np.linalg.norm(axis)
    return Fracture(center, n, axis, size, 1e-4 * size if aperture is None else aperture, k)


def unit_normal(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


normals = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.2)


# ---------------------------------------------------------------- geometry

def test_equivalent_disc_radius():
    assert equivalent_disc_radius(math.sqrt(math.pi)) == pytest.approx(1.0, abs=1e-15)
    assert equivalent_disc_radius(5.0) == pytest.approx(2.82095, abs=1e-5)
    for s in np.random.default_rng(0).uniform(0.1, 50, 20):
        assert math.pi * equivalent_disc_radius(s) ** 2 == pytest.approx(s * s, rel=1e-12)


def test_polygon32_constant():
    assert POLYGON32 == pytest.approx(3.12145, abs=1e-5)
    assert 1 - POLYGON32 / math.pi == pytest.approx(0.0064, abs=1e-4)


def test_plane_box_square():
    p = plane_box_polygon(frac((0.3, 0.7, 0.5), (0, 0, 1), 1.0), Box.cube(0, 1))
    assert len(p) == 4 and p.area == pytest.approx(1.0, abs=1e-14)


def test_plane_box_disjoint():
    assert plane_box_polygon(frac((0, 0, 2), (0, 0, 1), 1.0), Box.cube(0, 1)).is_empty


def test_plane_box_hexagon():
    p = plane_box_polygon(frac((0.5, 0.5, 0.5), (1, 1, 1), 1.0), Box.cube(0, 1))
    assert len(p) == 6
    assert p.area == pytest.approx(3 * math.sqrt(3) / 4, abs=1e-12)
    assert 3 * math.sqrt(3) / 4 == pytest.approx(1.29904, abs=1e-5)


@given(normals, st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95)))
def test_plane_box_polygon_lies_in_plane_and_box(n, c):
    f = frac(c, n, 1.0)
    p = plane_box_polygon(f, Box.cube(0, 1))
    assert 3 <= len(p) <= 6
    np.testing.assert_allclose((p.vertices - f.center) @ f.normal, 0, atol=1e-12)
    assert p.vertices.min() >= -1e-12 and p.vertices.max() <= 1 + 1e-12
    # a plane section of the unit cube never exceeds the diagonal rectangle sqrt(2)
    assert p.area <= math.sqrt(2) + 1e-12


def test_disc_clip_area_cases():
    big = frac((0.5, 0.5, 0.5), (0, 0, 1), 20.0)
    square = plane_box_polygon(big, Box.cube(0, 1))
    assert disc_clip_area(square, big) == pytest.approx(1.0, abs=1e-12)

    small = frac((0.5, 0.5, 0.5), (0, 0, 1), 0.3 * math.sqrt(math.pi))     # disc radius 0.3
    inside = plane_box_polygon(small, Box.cube(0, 1))
    assert disc_clip_area(inside, small) == pytest.approx(POLYGON32 * 0.09, rel=1e-12)

    far = frac((5.0, 5.0, 0.5), (0, 0, 1), 1.0)
    assert disc_clip_area(plane_box_polygon(far, Box.cube(0, 1)), far) == 0.0
    assert disc_clip_area(PlanarPolygon(np.empty((0, 3))), far) == 0.0


def test_polygon_area_matches_shoelace():
    f = frac((0, 0, 0), (0.2, -0.4, 1.0), 3.0)
    assert polygon_area(disc_polygon(f)) == pytest.approx(POLYGON32 * equivalent_disc_radius(3.0) ** 2, rel=1e-12)


# ---------------------------------------------------------------- rasterization

def test_rasterize_small_disc_monte_carlo():
    cell = 1.0
    grid = GridSpec.cube(0, 4, 4)
    r = 0.3 * cell
    f = frac((1.5, 2.5, 0.5), (0.3, 0.5, 1.0), r * math.sqrt(math.pi))
    hits = rasterize_fracture(f, grid)
    assert len(hits) == 1 and hits[0].voxel_index == (1, 2, 0)
    # Monte-Carlo area of the exact disc inside the voxel
    rng = np.random.default_rng(0)
    uv = rng.uniform(-r, r, (400_000, 2))
    pts = f.center + uv[:, :1] * f.in_plane_axis + uv[:, 1:] * f.second_axis
    inside = (np.hypot(uv[:, 0], uv[:, 1]) <= r) & np.all((pts >= (1, 2, 0)) & (pts <= (2, 3, 1)), axis=1)
    mc_area = inside.mean() * (2 * r) ** 2
    assert hits[0].weight == pytest.approx(hits[0].area * f.aperture / cell**3, rel=1e-14)
    assert hits[0].area == pytest.approx(mc_area, rel=0.01)


def test_rasterize_outside_grid():
    assert rasterize_fracture(frac((50, 50, 50), (0, 0, 1), 5.0), GridSpec.cube(0, 4, 4)) == []


@given(normals, st.floats(0.5, 3.0), st.tuples(st.floats(4, 6), st.floats(4, 6), st.floats(4, 6)))
def test_rasterize_partition_additivity(n, size, c):
    grid = GridSpec.cube(0, 10, 10)
    f = frac(c, n, size)
    idx, area, w = rasterize_arrays(f, grid)
    assert area.sum() == pytest.approx(POLYGON32 * equivalent_disc_radius(size) ** 2, rel=1e-9)
    assert len(np.unique(idx)) == len(idx)
    assert np.all((w >= 0) & (w <= 1)) and np.all(area >= 0)


def test_rasterize_matches_plane_box_clip():
    grid = GridSpec.cube(-1, 4, 5)
    f = frac((1.1, 0.8, 1.3), (0.4, -0.7, 0.6), 3.3)
    idx, area, _ = rasterize_arrays(f, grid)
    ijk = np.stack(np.unravel_index(idx, grid.dims), axis=1)
    for t, a in zip(ijk, area):
        lo = np.asarray(grid.origin) + t * grid.cell
        ref = disc_clip_area(plane_box_polygon(f, Box(tuple(lo), tuple(lo + grid.cell))), f)
        assert a == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_rasterize_weight_capped():
    grid = GridSpec.cube(0, 3, 3)
    f = frac((1.5, 1.5, 1.5), (0, 0, 1), 10.0, aperture=5.0)
    _, _, w = rasterize_arrays(f, grid)
    assert w.max() == 1.0


# ---------------------------------------------------------------- blending

def test_blend_examples():
    km = np.array([2.0, 3.0, 4.0, 0.1, 0.2, 0.3])
    np.testing.assert_array_equal(blend_conductivity(km, 5.0, 0.0), km)
    np.testing.assert_array_equal(blend_conductivity(km, 5.0, 1.0), [5, 5, 5, 0, 0, 0])
    np.testing.assert_allclose(blend_conductivity([1, 1, 1, 0, 0, 0], 3.0, 0.5), [2, 2, 2, 0, 0, 0])
    with pytest.raises(ParameterError):
        blend_conductivity(km, 5.0, 1.5)


def matrix(n=8, side=8.0, origin=0.0, seed=0):
    grid = GridSpec.cube(origin, side, n)
    return sample_conductivity_tensor_field(np.random.default_rng(seed), grid, CovarianceSpec(2.0), dataset_params("A"))


def test_voxelize_no_fractures_exact():
    m = matrix()
    out = voxelize_dfm([], m)
    assert np.array_equal(out.channels, m.channels)


def test_voxelize_single_fracture_equals_blend():
    m = matrix()
    f = frac((4.1, 3.9, 4.2), (0.2, 0.1, 1.0), 6.0, aperture=0.05, k=2.0)
    out = voxelize_dfm([f], m)
    idx, _, w = rasterize_arrays(f, m.grid)
    flat_m = m.channels.reshape(6, -1)
    flat_o = out.channels.reshape(6, -1)
    for i, wi in zip(idx, w):
        np.testing.assert_allclose(flat_o[:, i], blend_conductivity(flat_m[:, i], 2.0, wi), rtol=1e-14)
    untouched = np.setdiff1d(np.arange(m.grid.n_cells), idx)
    np.testing.assert_array_equal(flat_o[:, untouched], flat_m[:, untouched])


def test_voxelize_overlap_saturates():
    grid = GridSpec.cube(0, 5, 5)
    m = TensorGrid.constant(grid, [1, 1, 1, 0, 0, 0])
    f = frac((2.5, 2.5, 2.5), (0, 0, 1), 10.0, aperture=0.8, k=7.0)
    out = voxelize_dfm([f, f], m)
    np.testing.assert_allclose(out.channels[:, 2, 2, 2], [7, 7, 7, 0, 0, 0], rtol=1e-14)
    np.testing.assert_allclose(out.channels[:, 2, 2, 0], [1, 1, 1, 0, 0, 0])


def test_voxelize_grid_mismatch():
    m = matrix()
    with pytest.raises(ParameterError):
        voxelize_dfm([], m, GridSpec.cube(0, 8, 4))


def random_fractures(rng, n, lo, hi, k_scale=1.0):
    out = []
    for _ in range(n):
        out.append(frac(rng.uniform(lo, hi, 3), rng.standard_normal(3), rng.uniform(1, 6),
                        aperture=rng.uniform(0.001, 0.3), k=k_scale * rng.uniform(0.5, 2.0)))
    return out


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_voxelize_spd(seed, n):
    rng = np.random.default_rng(seed)
    m = matrix(6, 6.0, seed=seed % 7)
    out = voxelize_dfm(random_fractures(rng, n, 0, 6), m)
    assert out.is_spd()


@given(st.integers(0, 10_000))
def test_voxelize_monotone(seed):
    rng = np.random.default_rng(seed)
    m = matrix(6, 6.0, seed=seed % 5)
    kmax = float(np.linalg.eigvalsh(m.tensors()).max())
    base = random_fractures(rng, 2, 0, 6, k_scale=kmax * 2)
    extra = random_fractures(rng, 1, 1, 5, k_scale=kmax * 2)
    a = voxelize_dfm(base, m)
    b = voxelize_dfm(base + extra, m)
    idx, _, _ = rasterize_arrays(extra[0], m.grid)
    da = a.channels[:3].reshape(3, -1)[:, idx]
    db = b.channels[:3].reshape(3, -1)[:, idx]
    assert np.all(db >= da - 1e-12 * np.abs(da))


@given(st.integers(0, 10_000), st.tuples(st.integers(-8, 8), st.integers(-8, 8), st.integers(-8, 8)))
def test_voxelize_translation_equivariance(seed, steps):
    rng = np.random.default_rng(seed)
    m = matrix(6, 6.0)
    shift = 0.25 * np.asarray(steps, float)
    fr = random_fractures(rng, 3, 0, 6)
    a = voxelize_dfm(fr, m)
    moved = TensorGrid(m.grid.shifted(shift), m.channels)
    b = voxelize_dfm([f.translated(shift) for f in fr], moved)
    np.testing.assert_allclose(b.channels, a.channels, rtol=1e-12, atol=1e-15)


def test_refinement_consistency():
    f = frac((4.0, 4.0, 4.0), (0.3, -0.2, 1.0), 4.0, aperture=1e-3)
    totals = []
    for n in (8, 16):
        grid = GridSpec.cube(0, 8, n)
        _, _, w = rasterize_arrays(f, grid)
        totals.append(w.sum() * grid.cell**3)
    assert totals[1] == pytest.approx(totals[0], rel=0.02)
    assert totals[0] == pytest.approx(POLYGON32 * equivalent_disc_radius(4.0) ** 2 * 1e-3, rel=1e-9)


def test_cubic_law_fracture_blend_scale():
    # a physical fracture is thin: its weights are tiny but conductivity enters linearly
    grid = GridSpec.cube(0, 15, 16)
    m = TensorGrid.constant(grid, [0.02, 0.02, 0.02, 0, 0, 0])
    f = frac((7.5, 7.5, 7.5), (0, 0, 1), 8.0, k=float(cubic_law(8e-4)))
    out = voxelize_dfm([f], m)
    assert out.channels[0].max() > 0.02 and out.is_spd()


@pytest.mark.parametrize("z", [4.0, 10.0, 0.0])
def test_rasterize_fracture_on_voxel_face(z):
    # a fracture coplanar with a voxel face is counted once, in the cell above it
    # (the last cell for the top face of the grid)
    grid = GridSpec.cube(0, 10, 10)
    f = frac((5.0, 5.0, z), (0, 0, 1), 3.0)
    idx, area, _ = rasterize_arrays(f, grid)
    assert area.sum() == pytest.approx(POLYGON32 * equivalent_disc_radius(3.0) ** 2, rel=1e-12)
    layers = np.unique(np.unravel_index(idx, grid.dims)[2])
    assert layers.tolist() == [min(int(z), 9)]
