"""Homogenization samples: generation, preprocessing, splits, metrics and storage.

A dataset directory holds ``manifest.txt`` (key = value lines) and
``samples.bin``, a sequence of records::

    b"DFMS" | u32 id | f64 baseline | u32 n | n bytes of TGRD payload |
    6 x f64 target | f64 p30 | f64 corr_len | f64 kf_km | u64 seed
"""
from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dfn import DfnSpec, cubic_law, generate_dfn, training_dfn_spec
from .errors import DataError, FormatError, ParameterError, VersionError
from .fields import (DATASET_KF_KM, CovarianceSpec, GridSpec, TensorGrid, dataset_params,
                     sample_conductivity_tensor_field, tensor_grid_from_bytes, tensor_grid_to_bytes)
from .homogenize import homogenize_block
from .preprocess import (ComponentStats, NormalizationStats, component_stats, destandardize, matrix_baseline,
                         nrmse, r_squared, standardize)
from .voxelize import voxelize_dfm

MANIFEST = "manifest.txt"
SAMPLES = "samples.bin"
FORMAT_VERSION = 1
_REC_MAGIC = b"DFMS"


@dataclass(frozen=True)
class SampleConfig:
    dataset: str = "A"
    resolution: int = 16
    domain_side: float = 15.0
    corr_len: float = 10.0
    p30: float = 0.001
    kf_km: Optional[float] = None

    def __post_init__(self):
        if self.dataset not in DATASET_KF_KM:
            raise ParameterError(f"unknown dataset {self.dataset!r}")
        if self.resolution < 1 or self.domain_side <= 0:
            raise ParameterError("resolution and domain side must be positive")
        if self.p30 < 0 or self.corr_len < 0:
            raise ParameterError("p30 and correlation length must be non-negative")

    @property
    def ratio(self) -> float:
        return DATASET_KF_KM[self.dataset] if self.kf_km is None else float(self.kf_km)

    def grid(self) -> GridSpec:
        return GridSpec.cube(0.0, self.domain_side, self.resolution)

    def dfn_spec(self) -> Optional[DfnSpec]:
        """Training DFN scaled to the requested total P30 and conductivity ratio (None if p30 = 0)."""
        if self.p30 == 0:
            return None
        base = training_dfn_spec()
        k_m = float(np.exp(np.mean(dataset_params(self.dataset).mu)))
        k_min = float(cubic_law(base.aperture_coeff * base.r_lo, base.constants))
        return replace(base.with_total_p30(self.p30), conductivity_scale=self.ratio * k_m / k_min)


@dataclass
class DatasetSample:
    sample_id: int
    input: TensorGrid
    target: np.ndarray
    baseline: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64).reshape(6)
        if not self.baseline > 0:
            raise DataError("baseline must be positive")


def generate_sample(rng: np.random.Generator, config: SampleConfig, sample_id: int = 0,
                    seed: Optional[int] = None, fractures=None) -> DatasetSample:
    """DFN and matrix field on the sample domain; target by numerical homogenization."""
    grid = config.grid()
    dfn_rng, srf_rng = rng.spawn(2)
    if fractures is None:
        spec = config.dfn_spec()
        fractures = [] if spec is None else generate_dfn(dfn_rng, spec, grid.box)
    matrix = sample_conductivity_tensor_field(srf_rng, grid, CovarianceSpec(config.corr_len),
                                              dataset_params(config.dataset))
    baseline = matrix_baseline(matrix.channels)
    blended = voxelize_dfm(fractures, matrix)
    stored = TensorGrid(grid, blended.channels.astype(np.float32))
    target = homogenize_block(TensorGrid(grid, stored.channels.astype(np.float64))).voigt
    meta = {"p30": float(config.p30), "corr_len": float(config.corr_len), "kf_km": config.ratio,
            "seed": -1 if seed is None else int(seed)}
    return DatasetSample(sample_id, stored, target, baseline, meta)


def normalize_sample(sample: DatasetSample, recompute_baseline: bool = False) -> DatasetSample:
    """Divide input channels and target by the baseline matrix conductivity."""
    b = matrix_baseline(sample.input.channels) if recompute_baseline else sample.baseline
    chan = (sample.input.channels.astype(np.float64) / b)
    return DatasetSample(sample.sample_id, TensorGrid(sample.input.grid, chan), sample.target / b, 1.0,
                         dict(sample.meta))


def sample_arrays(samples: Sequence[DatasetSample]):
    """Normalized inputs (B, 6, n, n, n), normalized targets (B, 6) and baselines (B,)."""
    if not samples:
        raise ParameterError("no samples")
    base = np.array([s.baseline for s in samples])
    x = np.stack([s.input.channels.astype(np.float64) for s in samples]) / base[:, None, None, None, None]
    y = np.stack([s.target for s in samples]) / base[:, None]
    return x, y, base


def fit_stats(training: Sequence[DatasetSample]) -> NormalizationStats:
    """Input and output standardization stats from the training split only."""
    x, y, _ = sample_arrays(training)
    return NormalizationStats(component_stats(x, axis=1), component_stats(y, axis=-1))


def training_arrays(samples: Sequence[DatasetSample], stats: NormalizationStats, dtype=np.float32):
    x, y, _ = sample_arrays(samples)
    return (standardize(x, stats.inputs, axis=1).astype(dtype),
            standardize(y, stats.outputs).astype(dtype))


def split_dataset(n_or_manifest, rng: np.random.Generator) -> dict:
    """Seeded 64/16/20 train/validation/test split of sample indices."""
    n = n_or_manifest if isinstance(n_or_manifest, (int, np.integer)) else int(n_or_manifest["count"])
    if n < 5:
        raise ParameterError("at least 5 samples are needed for a 3-way split")
    order = rng.permutation(n)
    n_test = int(round(0.2 * n))
    n_val = int(round(0.2 * (n - n_test)))
    return {"train": np.sort(order[n_test + n_val:]), "val": np.sort(order[n_test:n_test + n_val]),
            "test": np.sort(order[:n_test])}


# ------------------------------------------------------------------ generation


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 200
    seed: int = 0
    dataset: str = "A"
    resolution: int = 16
    domain_side: float = 15.0
    corr_lens: tuple = (0.0, 10.0, 25.0)
    p30s: tuple = (0.001, 0.0025)

    def __post_init__(self):
        object.__setattr__(self, "corr_lens", tuple(float(v) for v in self.corr_lens))
        object.__setattr__(self, "p30s", tuple(float(v) for v in self.p30s))
        if self.n_samples < 1 or not self.corr_lens or not self.p30s:
            raise ParameterError("dataset config needs samples, correlation lengths and P30 values")

    def sample_config(self, i: int) -> SampleConfig:
        """Stratified assignment: correlation length cycles fastest, then P30."""
        lam = self.corr_lens[i % len(self.corr_lens)]
        p30 = self.p30s[(i // len(self.corr_lens)) % len(self.p30s)]
        return SampleConfig(self.dataset, self.resolution, self.domain_side, lam, p30)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(f"invalid dataset config: {exc}") from exc


def sample_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def _build_one(args):
    config, i = args
    seed = sample_seed(config.seed, i)
    return generate_sample(np.random.default_rng(seed), config.sample_config(i), i, seed)


def build_dataset(config: DatasetConfig, workers: int = 1, progress=None) -> list[DatasetSample]:
    """Generate all samples; results are ordered by index and independent of the worker count."""
    jobs = [(config, i) for i in range(config.n_samples)]
    if workers <= 1:
        out = []
        for job in jobs:
            out.append(_build_one(job))
            if progress:
                progress(len(out), len(jobs))
        return out
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_build_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ------------------------------------------------------------------ storage

def _record_bytes(s: DatasetSample) -> bytes:
    tg = tensor_grid_to_bytes(s.input)
    m = s.meta
    return b"".join([
        _REC_MAGIC, struct.pack("<Id", s.sample_id, s.baseline), struct.pack("<I", len(tg)), tg,
        struct.pack("<6d", *s.target),
        struct.pack("<dddQ", m.get("p30", 0.0), m.get("corr_len", 0.0), m.get("kf_km", 0.0),
                    int(m.get("seed", -1)) & 0xFFFFFFFFFFFFFFFF),
    ])


def _parse_records(buf: bytes) -> list[DatasetSample]:
    out, pos = [], 0
    while pos < len(buf):
        try:
            if buf[pos:pos + 4] != _REC_MAGIC:
                raise FormatError(f"bad record magic at byte {pos}")
            sid, base = struct.unpack_from("<Id", buf, pos + 4)
            (n,) = struct.unpack_from("<I", buf, pos + 16)
            start = pos + 20
            if start + n > len(buf):
                raise FormatError("truncated TGRD payload")
            field_, used = tensor_grid_from_bytes(buf[start:start + n])
            if used != n:
                raise FormatError("TGRD payload length mismatch")
            pos = start + n
            target = struct.unpack_from("<6d", buf, pos)
            p30, lam, ratio, seed = struct.unpack_from("<dddQ", buf, pos + 48)
            pos += 48 + 32
        except struct.error as exc:
            raise FormatError(f"truncated sample record: {exc}") from exc
        if seed == 0xFFFFFFFFFFFFFFFF:     # "no seed" sentinel
            seed = -1
        out.append(DatasetSample(sid, field_, np.array(target), base,
                                 {"p30": p30, "corr_len": lam, "kf_km": ratio, "seed": seed}))
    return out


def write_dataset(samples: Sequence[DatasetSample], path, config_hash: str = "none",
                  splits: Optional[dict] = None, extra: Optional[dict] = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / SAMPLES).write_bytes(b"".join(_record_bytes(s) for s in samples))
    res = samples[0].input.grid.dims[0] if samples else 0
    lines = {"format": "dfmup-dataset", "version": FORMAT_VERSION, "count": len(samples),
             "resolution": res, "config_hash": config_hash, "samples": SAMPLES}
    if splits:
        for name, idx in splits.items():
            lines[f"split.{name}"] = ",".join(str(int(i)) for i in idx)
    for k, v in (extra or {}).items():
        lines[k] = v
    (root / MANIFEST).write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return root


def read_manifest(path) -> dict:
    root = Path(path)
    try:
        text = (root / MANIFEST).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read manifest in {root}: {exc}") from exc
    d = {}
    for ln in text.splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise FormatError(f"bad manifest line {ln!r}")
        k, v = ln.split("=", 1)
        d[k.strip()] = v.strip()
    if d.get("format") != "dfmup-dataset":
        raise FormatError("not a dfmup dataset manifest")
    try:
        version = int(d["version"])
        d["count"] = int(d["count"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad manifest: {exc}") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"dataset format version {version} is not supported (reader is v{FORMAT_VERSION})")
    d["version"] = version
    return d


def manifest_splits(manifest: dict) -> Optional[dict]:
    keys = [k for k in manifest if k.startswith("split.")]
    if not keys:
        return None
    return {k[6:]: np.array([int(i) for i in manifest[k].split(",") if i], dtype=int) for k in keys}


def read_dataset(path) -> tuple[list[DatasetSample], dict]:
    root = Path(path)
    manifest = read_manifest(root)
    try:
        buf = (root / manifest.get("samples", SAMPLES)).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read samples: {exc}") from exc
    samples = _parse_records(buf)
    if len(samples) != manifest["count"]:
        raise FormatError(f"manifest announces {manifest['count']} samples, file holds {len(samples)}")
    return samples, manifest


__all__ = ["SampleConfig", "DatasetSample", "DatasetConfig", "generate_sample", "normalize_sample",
           "sample_arrays", "fit_stats", "training_arrays", "split_dataset", "build_dataset",
           "sample_seed", "write_dataset", "read_dataset", "read_manifest", "manifest_splits",
           "standardize", "destandardize", "nrmse", "r_squared", "ComponentStats", "NormalizationStats"]
