"""End-to-end workflows behind the command-line tool.

Each function takes a resolved run configuration (see :mod:`dfmup.config`)
and writes its outputs into a directory.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .darcy import solve_constraint
from .dataset import SampleConfig, sample_seed
from .dfn import Fracture, filter_size_range, generate_dfn, read_fractures, write_fractures
from .errors import DataError, ParameterError
from .fields import (COMPONENT_NAMES, CovarianceSpec, GridSpec, TensorGrid, dataset_params,
                     read_tensor_grid, sample_conductivity_tensor_field, write_tensor_grid)
from .homogenize import (block_centers, coarse_lattice_target, homogenize_block, homogenize_domain,
                         interpolate_coarse)
from .preprocess import nrmse, r_squared
from .voxelize import voxelize_dfm

FRACTURES = "fractures.txt"
MATRIX = "matrix.tgrd"
COARSE = "coarse.tgrd"
BLOCKS = "blocks.csv"
REPORT = "report.json"
LARGE = "large_fractures.txt"


def _domain(cfg):
    d = cfg["domain"]
    return float(d["L"]), float(d["H"]), float(d["h"])


def enlarged_grid(cfg) -> GridSpec:
    """Voxel grid of the enlarged domain (-l/2, L + l/2)^3 at the block resolution."""
    L, H, _ = _domain(cfg)
    layout = block_centers(L, H)
    n = int(cfg["upscale"]["block_resolution"])
    cell = layout.block_size / n
    dims = int(round((L + layout.block_size) / cell))
    return GridSpec.cube(-0.5 * layout.block_size, dims * cell, dims)


def sample_domain(cfg, seed: int):
    """DFN of all sizes and the matrix tensor field on the enlarged domain."""
    grid = enlarged_grid(cfg)
    sc = SampleConfig(cfg["srf"]["dataset"], 1, 1.0, float(cfg["srf"]["corr_len"]),
                      float(cfg["dfn"]["p30"]), cfg["dfn"]["kf_km"])
    dfn_rng, srf_rng = np.random.default_rng(seed).spawn(2)
    spec = sc.dfn_spec()
    fractures = [] if spec is None else generate_dfn(dfn_rng, spec, grid.box)
    matrix = sample_conductivity_tensor_field(srf_rng, grid, CovarianceSpec(sc.corr_len),
                                              dataset_params(sc.dataset))
    return fractures, matrix, ("none" if spec is None else spec.digest())


def run_gen(cfg, out_dir, seed: Optional[int] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"]) if seed is None else seed
    fractures, matrix, digest = sample_domain(cfg, seed)
    write_fractures(fractures, out / FRACTURES, digest)
    write_tensor_grid(matrix, out / MATRIX)
    L, H, h = _domain(cfg)
    diag = matrix.channels[:3].astype(np.float64)
    return {"seed": seed, "fractures": len(fractures),
            "upscaled_fractures": len(filter_size_range(fractures, h, H)),
            "large_fractures": len(filter_size_range(fractures, H, np.inf)),
            "enlarged_side": L + block_centers(L, H).block_size,
            "voxels": list(matrix.grid.dims),
            "k_diag_mean": float(diag.mean()), "k_diag_min": float(diag.min()),
            "k_diag_max": float(diag.max())}


def load_surrogate(path):
    from .nn.predict import SurrogateModel
    if not path:
        raise ParameterError("the surrogate backend needs upscale.weights (a weight file)")
    return SurrogateModel.load(path)


def run_upscale(cfg, source_dir, out_dir, backend: Optional[str] = None, surrogate=None) -> dict:
    """Block homogenization of a generated sample; writes the coarse field, block CSV and report."""
    src, out = Path(source_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backend = backend or cfg["upscale"]["backend"]
    fractures, _ = read_fractures(src / FRACTURES)
    matrix = read_tensor_grid(src / MATRIX)
    if backend == "surrogate" and surrogate is None:
        surrogate = load_surrogate(cfg["upscale"]["weights"])
    L, H, h = _domain(cfg)
    coarse, report = homogenize_domain(fractures, matrix, L, H, h, backend, surrogate, cfg["workers"],
                                       float(cfg["solver"]["tol"]))
    write_tensor_grid(coarse, out / COARSE)
    report.write_csv(out / BLOCKS)
    write_fractures(filter_size_range(fractures, H, np.inf), out / LARGE)
    summary = {"backend": backend, "n_blocks": report.layout.n_blocks, "projected": report.projected,
               "timing": report.timing}
    (out / REPORT).write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# ------------------------------------------------------------------ macro benchmark


@dataclass
class MacroResult:
    outflow: float
    tensor: np.ndarray     # Voigt 6-vector of the domain-level equivalent tensor


def macro_model(coarse: TensorGrid, L: float, H: float, resolution: int,
                large_fractures: Sequence[Fracture] = ()) -> TensorGrid:
    """Coarse conductivity on a regular grid over (0, L)^3, optionally with the large fractures blended in."""
    target = coarse_lattice_target(block_centers(L, H), resolution)
    field = interpolate_coarse(coarse, target)
    if large_fractures:
        field = voxelize_dfm(list(large_fractures), field)
    return field


def macro_solve(field: TensorGrid, L: float, **solver_kw) -> MacroResult:
    """Outflow of the unit-head Constraint problem along x and the domain equivalent tensor."""
    y = solve_constraint(field, H=1.0, L=L, axis=0, **solver_kw)
    return MacroResult(float(y), homogenize_block(field, **solver_kw).voigt)


def _read_upscaled(path):
    path = Path(path)
    coarse = read_tensor_grid(path / COARSE)
    large = read_fractures(path / LARGE)[0] if (path / LARGE).exists() else []
    return coarse, large


def benchmark_fields(cfg, numerical: Sequence, surrogate: Sequence) -> dict:
    """Macro comparison of paired coarse fields.

    ``numerical`` and ``surrogate`` are sequences of (TensorGrid, large fractures)
    pairs or of upscale output directories.
    """
    if len(numerical) != len(surrogate):
        raise ParameterError(f"{len(numerical)} numerical vs {len(surrogate)} surrogate fields")
    L, H, _ = _domain(cfg)
    res = int(cfg["benchmark"]["coarse_resolution"])
    use_large = bool(cfg["benchmark"]["large_fractures"])
    tol = float(cfg["solver"]["tol"])
    rows = {"numerical": [], "surrogate": []}
    for a, b in zip(numerical, surrogate):
        a = _read_upscaled(a) if isinstance(a, (str, Path)) else a
        b = _read_upscaled(b) if isinstance(b, (str, Path)) else b
        if not a[0].grid.matches(b[0].grid):
            raise ParameterError("numerical and surrogate coarse fields live on different grids")
        for key, (coarse, large) in (("numerical", a), ("surrogate", b)):
            field = macro_model(coarse, L, H, res, large if use_large else ())
            r = macro_solve(field, L, tol=tol)
            rows[key].append(np.concatenate([[r.outflow], r.tensor]))
    num, sur = np.array(rows["numerical"]), np.array(rows["surrogate"])
    per, _ = nrmse(sur, num)
    return {"quantities": ["Y"] + list(COMPONENT_NAMES), "nrmse": per, "numerical": num, "surrogate": sur}


def write_benchmark(result: dict, out_dir) -> None:
    out = Path(out_dir)
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "NRMSE"])
        for q, v in zip(result["quantities"], result["nrmse"]):
            w.writerow([q, repr(float(v))])
    with open(out / "macro_values.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        qs = result["quantities"]
        w.writerow(["sample"] + [f"{q}_numerical" for q in qs] + [f"{q}_surrogate" for q in qs])
        for i, (a, b) in enumerate(zip(result["numerical"], result["surrogate"])):
            w.writerow([i] + [repr(float(x)) for x in a] + [repr(float(x)) for x in b])


def run_benchmark(cfg, out_dir, reference_backend: str = "surrogate") -> dict:
    """Generate ``benchmark.samples`` domains, upscale with both backends and compare macro outputs.

    ``reference_backend="numerical"`` replaces the surrogate by the numerical
    backend (self-consistency check; every NRMSE is then zero).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(cfg["benchmark"]["samples"])
    if n < 2:
        raise ParameterError("benchmark.samples must be at least 2 (NRMSE is taken across samples)")
    surrogate = load_surrogate(cfg["upscale"]["weights"]) if reference_backend == "surrogate" else None
    num_dirs, sur_dirs, timing = [], [], []
    for k in range(n):
        sdir = out / f"sample_{k:03d}"
        run_gen(cfg, sdir / "input", sample_seed(int(cfg["seed"]), k))
        a = run_upscale(cfg, sdir / "input", sdir / "numerical", "numerical")
        b = run_upscale(cfg, sdir / "input", sdir / "surrogate", reference_backend, surrogate)
        num_dirs.append(sdir / "numerical")
        sur_dirs.append(sdir / "surrogate")
        timing.append({"sample": k, "numerical": a["timing"], "compared": b["timing"]})
    result = benchmark_fields(cfg, num_dirs, sur_dirs)
    write_benchmark(result, out)
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    return result


# ------------------------------------------------------------------ prediction reports

PRED_FIELDS = ["sample_id", "p30", "corr_len", "baseline"] + \
    [f"target_{c}" for c in COMPONENT_NAMES] + [f"pred_{c}" for c in COMPONENT_NAMES]


def write_predictions(path, samples, predictions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRED_FIELDS)
        for s, p in zip(samples, np.asarray(predictions)):
            w.writerow([s.sample_id, repr(s.meta.get("p30", np.nan)), repr(s.meta.get("corr_len", np.nan)),
                        repr(s.baseline)] + [repr(float(x)) for x in s.target] + [repr(float(x)) for x in p])


def read_predictions(path) -> dict:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} holds no predictions")
    missing = [f for f in PRED_FIELDS if f not in rows[0]]
    if missing:
        raise DataError(f"{path} lacks columns {missing}")
    try:
        cols = {f: np.array([float(r[f]) for r in rows]) for f in PRED_FIELDS}
    except ValueError as exc:
        raise DataError(f"non-numeric value in {path}: {exc}") from exc
    return {"target": np.stack([cols[f"target_{c}"] for c in COMPONENT_NAMES], axis=1),
            "pred": np.stack([cols[f"pred_{c}"] for c in COMPONENT_NAMES], axis=1),
            "p30": cols["p30"], "corr_len": cols["corr_len"], "sample_id": cols["sample_id"].astype(int)}


def _metric_rows(pred, targ):
    per, mean = nrmse(pred, targ)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = r_squared(pred, targ)
    return per, mean, r2


def run_report(pred_path, out_dir) -> dict:
    """Metrics table, target/prediction pairs and NRMSE grouped by correlation length and P30."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = read_predictions(pred_path)
    per, mean, r2 = _metric_rows(d["pred"], d["target"])
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "NRMSE", "R2"])
        for c, v, r in zip(COMPONENT_NAMES, per, r2):
            w.writerow([c, repr(float(v)), repr(float(r))])
        w.writerow(["mean", repr(mean), repr(float(np.mean(r2)))])
    with open(out / "pairs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "component", "target", "prediction"])
        for i, sid in enumerate(d["sample_id"]):
            for j, c in enumerate(COMPONENT_NAMES):
                w.writerow([sid, c, repr(float(d["target"][i, j])), repr(float(d["pred"][i, j]))])
    for key in ("corr_len", "p30"):
        with open(out / f"nrmse_by_{key}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([key, "count"] + list(COMPONENT_NAMES) + ["mean"])
            for g in np.unique(d[key]):
                sel = d[key] == g
                try:
                    gp, gm = nrmse(d["pred"][sel], d["target"][sel])
                except DataError:
                    gp, gm = np.full(6, np.nan), float("nan")
                w.writerow([repr(float(g)), int(sel.sum())] + [repr(float(x)) for x in gp] + [repr(gm)])
    return {"nrmse": per, "mean_nrmse": mean, "r2": r2}


__all__ = ["enlarged_grid", "sample_domain", "run_gen", "run_upscale", "load_surrogate", "macro_model",
           "macro_solve", "MacroResult", "benchmark_fields", "write_benchmark", "run_benchmark",
           "write_predictions", "read_predictions", "run_report"]
