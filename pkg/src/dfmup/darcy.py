"""Steady Darcy flow -div(K grad h) = 0 on voxel grids with full conductivity tensors.

Cell-centered finite volumes.  The normal flux through an interior face
uses the harmonic mean of the two normal-normal tensor entries; cross
terms use the arithmetic mean of the off-diagonal entry times the mean of
the two cells' centered tangential gradients.  Dirichlet faces use a
half-cell one-sided difference plus the exact tangential derivative of the
affine boundary head.  The scheme is conservative and reproduces affine
heads exactly for constant tensors.  With off-diagonal entries the matrix
is not symmetric, so the default solver picks a direct factorization for
small grids, CG when the matrix is symmetric and BiCGSTAB otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import ParameterError, SolverError
from .fields import GridSpec, TensorGrid
from .krylov import bicgstab, jacobi, pcg

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
DIRECT_LIMIT = 1000
# Krylov iterations run to this fraction of the requested residual so that head
# errors (residual times condition number) stay near the requested level.
KRYLOV_MARGIN = 1e-2


@dataclass(frozen=True)
class BoundaryCondition:
    """Per box face: affine Dirichlet head (c0, gx, gy, gz) meaning h = c0 + g.x, or None for no-flow."""

    faces: tuple

    def __post_init__(self):
        faces = tuple(None if f is None else tuple(float(v) for v in f) for f in self.faces)
        if len(faces) != 6 or any(f is not None and len(f) != 4 for f in faces):
            raise ParameterError("boundary condition needs 6 faces, each None or (c0, gx, gy, gz)")
        if all(f is None for f in faces):
            raise ParameterError("at least one Dirichlet face is required")
        object.__setattr__(self, "faces", faces)

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Optional[tuple]]) -> "BoundaryCondition":
        unknown = set(spec) - set(FACES)
        if unknown:
            raise ParameterError(f"unknown faces {sorted(unknown)}")
        return cls(tuple(spec.get(name) for name in FACES))

    @classmethod
    def linear(cls, gradient, offset: float = 0.0) -> "BoundaryCondition":
        """Dirichlet h = offset + gradient . x on all six faces."""
        g = np.asarray(gradient, dtype=float)
        return cls(tuple((offset, *g) for _ in FACES))

    @classmethod
    def constraint(cls, head: float, axis: int = 0) -> "BoundaryCondition":
        """h = head on the lower face along ``axis``, h = 0 on the upper face, no flow elsewhere."""
        faces = [None] * 6
        faces[2 * axis] = (head, 0.0, 0.0, 0.0)
        faces[2 * axis + 1] = (0.0, 0.0, 0.0, 0.0)
        return cls(tuple(faces))

    def arrays(self):
        types = np.array([0 if f is None else 1 for f in self.faces], dtype=np.int64)
        coef = np.array([(0.0, 0.0, 0.0, 0.0) if f is None else f for f in self.faces])
        return types, coef

    def scaled(self, alpha: float) -> "BoundaryCondition":
        return BoundaryCondition(tuple(None if f is None else tuple(alpha * v for v in f) for f in self.faces))


@dataclass
class HeadSolution:
    grid: GridSpec
    head: np.ndarray          # (nx, ny, nz)
    velocity: np.ndarray      # (nx, ny, nz, 3) Darcy flux density
    gradient: np.ndarray      # (nx, ny, nz, 3) reconstructed head gradient
    face_flux: tuple          # per axis, (n_a + 1)-extended arrays of face fluxes along +a
    iterations: int
    residual: float
    method: str
    residual_history: list = dc_field(default_factory=list)

    def boundary_flux(self, face: str) -> float:
        """Total outward flux through one box face."""
        axis, upper = FACES.index(face) // 2, face.endswith("+")
        f = self.face_flux[axis]
        sl = [slice(None)] * 3
        sl[axis] = -1 if upper else 0
        total = float(f[tuple(sl)].sum())
        return total if upper else -total

    def mass_imbalance(self) -> float:
        """Net outward flux through the whole boundary."""
        return sum(self.boundary_flux(name) for name in FACES)

    def mean_velocity(self) -> np.ndarray:
        return self.velocity.reshape(-1, 3).mean(axis=0)

    def mean_gradient(self) -> np.ndarray:
        return self.gradient.reshape(-1, 3).mean(axis=0)


def _divergence(dims) -> sp.csr_matrix:
    """Net outward face flux per cell, (n_cells x n_faces)."""
    dims = tuple(int(d) for d in dims)
    rows, cols, vals = [], [], []
    off = 0
    for a in range(3):
        fd = list(dims)
        fd[a] += 1
        n = int(np.prod(fd))
        ijk = np.stack(np.unravel_index(np.arange(n), fd), axis=1)
        for sign, shift in ((-1.0, 0), (1.0, 1)):
            # face ijk is the lower face of cell ijk (outflow -F) and upper face of ijk - e_a (outflow +F)
            cell = ijk.copy()
            cell[:, a] -= shift
            ok = (cell[:, a] >= 0) & (cell[:, a] < dims[a])
            rows.append(np.ravel_multi_index(tuple(cell[ok].T), dims))
            cols.append(np.arange(n)[ok] + off)
            vals.append(np.full(ok.sum(), sign))
        off += n
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(int(np.prod(dims)), off))


def assemble(field: TensorGrid, bc: BoundaryCondition):
    """Face-flux operator (M, f) with F = M h + f, and the cell balance system (A, b)."""
    types, coef = bc.arrays()
    chan = np.ascontiguousarray(field.channels, dtype=np.float64)
    grid = field.grid
    rows, cols, vals, const, n_faces = kernels.face_flux_coo(
        chan, np.asarray(grid.origin, dtype=float), float(grid.cell), types, coef)
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n_faces, grid.n_cells))
    D = _divergence(grid.dims)
    A = (D @ M).tocsr()
    b = -(D @ const)
    return M, const, A, b


def _is_symmetric(A, tol=1e-13) -> bool:
    diff = abs(A - A.T)
    return diff.nnz == 0 or diff.max() <= tol * abs(A).max()


def _solve_system(A, b, tol, max_iter, method):
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else ("cg" if _is_symmetric(A) else "bicgstab")
    if method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
        nb = np.linalg.norm(b)
        res = float(np.linalg.norm(b - A @ x) / nb) if nb > 0 else 0.0
        if not np.isfinite(res) or res > tol:
            raise SolverError(f"direct solve residual {res:.3e} exceeds tolerance", [res])
        return x, 1, res, [res], method
    pre = jacobi(A)
    target = tol * KRYLOV_MARGIN
    if method == "cg":
        out = pcg(A, b, target, max_iter, pre, raise_on_fail=False)
    elif method == "bicgstab":
        out = bicgstab(A, b, target, max_iter, pre, raise_on_fail=False)
    elif method == "ilu-bicgstab":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=10)
        out = bicgstab(A, b, target, max_iter, ilu.solve, raise_on_fail=False)
    else:
        raise ParameterError(f"unknown solver method {method!r}")
    if not out.residual <= tol:
        raise SolverError(f"{method} did not reach residual {tol:.1e} in {out.iterations} iterations "
                          f"(residual {out.residual:.3e})", out.history)
    return out.x, out.iterations, out.residual, out.history, method


def solve_head(field: TensorGrid, bc: BoundaryCondition, tol: float = 1e-10, max_iter: Optional[int] = None,
               method: str = "auto") -> HeadSolution:
    if not field.is_spd():
        raise ParameterError("conductivity field is not SPD")
    grid = field.grid
    max_iter = 50 * grid.n_cells if max_iter is None else max_iter
    M, const, A, b = assemble(field, bc)
    h, iters, res, hist, used = _solve_system(A, b, tol, max_iter, method)
    flux = M @ h + const
    area = grid.cell ** 2
    nx, ny, nz = grid.dims
    per_axis = []
    vel = np.empty(grid.dims + (3,))
    off = 0
    for a in range(3):
        fd = list(grid.dims)
        fd[a] += 1
        n = int(np.prod(fd))
        fa = flux[off:off + n].reshape(fd)
        off += n
        per_axis.append(fa)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        vel[..., a] = 0.5 * (fa[tuple(lo)] + fa[tuple(hi)]) / area
    K = field.tensors()
    grad = -np.linalg.solve(K, vel[..., None])[..., 0]
    return HeadSolution(grid, h.reshape(grid.dims), vel, grad, tuple(per_axis), iters, res, used, hist)


def solve_constraint(field: TensorGrid, H: float = 1.0, L: Optional[float] = None, axis: int = 0,
                     **solver_kw) -> float:
    """Outflow through the upper face for head H on the lower face and no flow on the sides."""
    grid = field.grid
    if L is not None:
        box = grid.box
        if not (np.allclose(box.lo, 0.0, atol=1e-9 * L) and np.allclose(box.hi, L, rtol=1e-9)):
            raise ParameterError(f"field extent {box} is not the cube (0, {L})^3")
    sol = solve_head(field, BoundaryCondition.constraint(H, axis), **solver_kw)
    return sol.boundary_flux(FACES[2 * axis + 1])


def constraint_solution(field: TensorGrid, H: float = 1.0, axis: int = 0, **solver_kw) -> HeadSolution:
    return solve_head(field, BoundaryCondition.constraint(H, axis), **solver_kw)


def solve_anisotropy(field: TensorGrid, **solver_kw) -> list[HeadSolution]:
    """Three solves with all-face Dirichlet heads h = x, h = y and h = z."""
    return [solve_head(field, BoundaryCondition.linear(np.eye(3)[j]), **solver_kw) for j in range(3)]


def permute_field(field: TensorGrid, perm) -> TensorGrid:
    """Relabel grid axes: new axis i is old axis perm[i] (tensor components follow)."""
    from .fields import VOIGT_PAIRS, voigt_index

    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [0, 1, 2]:
        raise ParameterError(f"{perm} is not a permutation of (0, 1, 2)")
    g = field.grid
    grid = GridSpec(tuple(g.origin[p] for p in perm), g.cell, tuple(g.dims[p] for p in perm))
    chan = np.empty((6,) + grid.dims, dtype=field.channels.dtype)
    for v, (i, j) in enumerate(VOIGT_PAIRS):
        chan[v] = np.transpose(field.channels[voigt_index(perm[i], perm[j])], perm)
    return TensorGrid(grid, chan)


__all__ = ["BoundaryCondition", "HeadSolution", "FACES", "assemble", "solve_head", "solve_constraint",
           "constraint_solution", "solve_anisotropy", "permute_field"]
