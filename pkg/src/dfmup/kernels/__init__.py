"""Hot loop kernels with a numba implementation and a pure-numpy fallback.

The active implementation is chosen once at import time from the
``DFMUP_KERNELS`` environment variable: ``numba`` (default when numba is
importable) or ``numpy``.  Both expose the same functions:

``rasterize_polygon(poly, origin, cell, dims) -> (flat_index, area)``
    area of a planar convex polygon inside each voxel of a regular grid.
``face_flux_coo(channels, origin, cell, bc_type, bc_coef) -> (rows, cols, vals, const, n_faces)``
    linear face-flux operator of the cell-centered Darcy scheme.
"""
import importlib
import os
import warnings

NEUMANN = 0
DIRICHLET = 1


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def load(name: str):
    """Kernel module for ``name`` in {"numba", "numpy"}."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"{__name__}._{name}")


_requested = os.environ.get("DFMUP_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    warnings.warn(f"DFMUP_KERNELS={_requested!r} not understood, using numpy kernels")
    _requested = "numpy"
if _requested == "numba" and not _numba_available():
    _requested = "numpy"

BACKEND = _requested
_impl = load(BACKEND)
rasterize_polygon = _impl.rasterize_polygon
face_flux_coo = _impl.face_flux_coo
