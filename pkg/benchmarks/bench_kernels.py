"""Timing of the numba kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--n 32] [--repeat 5]

Both backends are loaded side by side (independently of DFMUP_KERNELS),
checked for agreement on the same inputs, then timed.  The numba column
excludes the first (compiling) call.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from dfmup import kernels
from dfmup.darcy import BoundaryCondition
from dfmup.dfn import Box, generate_dfn, training_dfn_spec
from dfmup.fields import CovarianceSpec, GridSpec, dataset_params, sample_conductivity_tensor_field
from dfmup.voxelize import disc_polygon


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return min(times)


def rasterize_case(mod, polys, grid):
    origin = np.asarray(grid.origin, dtype=float)
    dims = np.asarray(grid.dims, dtype=np.int64)
    return [mod.rasterize_polygon(p, origin, float(grid.cell), dims) for p in polys]


def flux_case(mod, chan, grid, bc):
    types, coef = bc.arrays()
    return mod.face_flux_coo(chan, np.asarray(grid.origin, dtype=float), float(grid.cell), types, coef)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32, help="voxels per axis")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    grid = GridSpec.cube(0.0, 15.0, args.n)
    spec = training_dfn_spec().with_total_p30(0.01)
    fractures = generate_dfn(rng, spec, Box.cube(0.0, 15.0))
    polys = [disc_polygon(f) for f in fractures]
    chan = np.ascontiguousarray(sample_conductivity_tensor_field(
        rng, grid, CovarianceSpec(5.0), dataset_params("A")).channels, dtype=np.float64)
    bc = BoundaryCondition.linear((1.0, 0.0, 0.0))

    backends = {}
    for name in ("numpy", "numba"):
        try:
            backends[name] = kernels.load(name)
        except ImportError as exc:
            print(f"{name}: unavailable ({exc})")

    cases = {
        f"rasterize_polygon x{len(polys)}": lambda m: rasterize_case(m, polys, grid),
        f"face_flux_coo {args.n}^3": lambda m: flux_case(m, chan, grid, bc),
    }
    if "numba" in backends:
        tic = time.perf_counter()
        for case in cases.values():
            case(backends["numba"])
        print(f"numba compile + first call: {time.perf_counter() - tic:.2f} s")

    if len(backends) == 2:
        r_np, r_nb = rasterize_case(backends["numpy"], polys, grid), rasterize_case(backends["numba"], polys, grid)
        err = max((np.max(np.abs(a[1] - b[1])) if len(a[1]) else 0.0) for a, b in zip(r_np, r_nb))
        same = all(np.array_equal(a[0], b[0]) for a, b in zip(r_np, r_nb))
        f_np, f_nb = flux_case(backends["numpy"], chan, grid, bc), flux_case(backends["numba"], chan, grid, bc)
        # triplet order may differ between backends: compare the summed sparse operators
        mats = [sp.csr_matrix((f[2], (f[0], f[1])), shape=(f[4], grid.n_cells)) for f in (f_np, f_nb)]
        ferr = abs(mats[0] - mats[1]).max() / abs(mats[0]).max()
        ferr = max(ferr, np.max(np.abs(f_np[3] - f_nb[3])) / max(np.max(np.abs(f_np[3])), 1e-300))
        print(f"parity: rasterize indices equal={same}, max area diff={err:.2e}; "
              f"flux max rel diff={ferr:.2e}")

    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n in backends) + f"{'speedup':>10}")
    for label, case in cases.items():
        t = {n: best_time(lambda m=m: case(m), args.repeat) for n, m in backends.items()}
        speed = t["numpy"] / t["numba"] if len(t) == 2 else float("nan")
        print(f"{label:<28}" + "".join(f"{v * 1e3:>10.2f}ms" for v in t.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
