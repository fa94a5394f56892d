"""Per-sample normalization, log/linear standardization and NRMSE metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .fields import DIAGONAL, COMPONENT_NAMES


@dataclass(frozen=True)
class ComponentStats:
    """Per-Voigt-component mean and std (of log k for diagonal components)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(6)
        std = np.asarray(self.std, dtype=float).reshape(6)
        if not np.all(std > 0):
            raise DataError(f"standard deviations must be positive, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "ComponentStats":
        return cls(d["mean"], d["std"])


@dataclass(frozen=True)
class NormalizationStats:
    inputs: ComponentStats
    outputs: ComponentStats

    def to_json(self) -> str:
        return json.dumps({"inputs": self.inputs.to_dict(), "outputs": self.outputs.to_dict()})

    @classmethod
    def from_json(cls, text: str) -> "NormalizationStats":
        try:
            d = json.loads(text)
            return cls(ComponentStats.from_dict(d["inputs"]), ComponentStats.from_dict(d["outputs"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"invalid normalization stats: {exc}") from exc


def _component_axis(values, axis):
    v = np.asarray(values, dtype=np.float64)
    if v.shape[axis] != 6:
        raise ParameterError(f"expected 6 Voigt components on axis {axis}, got shape {v.shape}")
    return np.moveaxis(v, axis, -1)


def _transform(v: np.ndarray) -> np.ndarray:
    diag = v[..., DIAGONAL]
    if np.any(diag <= 0):
        raise DataError("diagonal components must be positive for the log transform")
    out = v.copy()
    out[..., DIAGONAL] = np.log(diag)
    return out


def component_stats(values, axis: int = -1) -> ComponentStats:
    """Mean and Bessel-corrected std of each component after the log transform of the diagonal."""
    v = _transform(_component_axis(values, axis)).reshape(-1, 6)
    if len(v) < 2:
        raise DataError("at least two values are needed for a standard deviation")
    std = v.std(axis=0, ddof=1)
    if np.any(std <= 0):
        bad = [COMPONENT_NAMES[i] for i in np.flatnonzero(std <= 0)]
        raise DataError(f"zero variance in components {bad}")
    return ComponentStats(v.mean(axis=0), std)


def standardize(values, stats: ComponentStats, axis: int = -1) -> np.ndarray:
    v = _transform(_component_axis(values, axis))
    return np.moveaxis((v - stats.mean) / stats.std, -1, axis)


def destandardize(values, stats: ComponentStats, axis: int = -1) -> np.ndarray:
    z = _component_axis(values, axis)
    v = z * stats.std + stats.mean
    v[..., DIAGONAL] = np.exp(v[..., DIAGONAL])
    return np.moveaxis(v, -1, axis)


def matrix_baseline(channels) -> float:
    """Mean over all six Voigt channels and all voxels."""
    b = float(np.asarray(channels, dtype=np.float64).mean())
    if not b > 0:
        raise DataError(f"baseline conductivity must be positive, got {b}")
    return b


def nrmse(predictions, targets):
    """Per-component RMSE over population std of the targets, and their mean."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ParameterError(f"shape mismatch {p.shape} vs {t.shape}")
    if t.ndim == 1:
        p, t = p[:, None], t[:, None]
    if len(t) < 2:
        raise DataError("NRMSE needs at least two samples")
    sd = t.std(axis=0)
    if np.any(sd <= 0):
        raise DataError("zero target variance")
    per = np.sqrt(((p - t) ** 2).mean(axis=0)) / sd
    return per, float(per.mean())


def r_squared(predictions, targets) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    ss_res = ((p - t) ** 2).sum(axis=0)
    ss_tot = ((t - t.mean(axis=0)) ** 2).sum(axis=0)
    return 1.0 - ss_res / ss_tot
