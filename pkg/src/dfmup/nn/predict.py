"""Surrogate inference on raw voxelized conductivity fields."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ParameterError
from ..fields import TensorGrid
from ..preprocess import NormalizationStats, destandardize, matrix_baseline, standardize
from .io import load_weights, save_weights
from .model import Network


def prepare_inputs(channels: np.ndarray, baselines, stats: NormalizationStats) -> np.ndarray:
    """(B, 6, n, n, n) raw channels -> standardized network inputs."""
    x = np.asarray(channels, dtype=np.float64)
    b = np.asarray(baselines, dtype=np.float64).reshape(-1, 1, 1, 1, 1)
    return standardize(x / b, stats.inputs, axis=1)


def predict_batch(model: Network, stats: Optional[NormalizationStats], channels, baselines) -> np.ndarray:
    if stats is None:
        raise ParameterError("normalization stats are required for prediction")
    x = prepare_inputs(channels, baselines, stats)
    z = model.predict(x).astype(np.float64)
    return destandardize(z, stats.outputs) * np.asarray(baselines, dtype=np.float64).reshape(-1, 1)


def predict_equivalent(model: Network, stats: Optional[NormalizationStats], raw_input: TensorGrid,
                       baseline: Optional[float] = None) -> np.ndarray:
    """Equivalent tensor (Voigt 6-vector) of one raw field.

    ``baseline`` is the mean matrix conductivity; without it the mean of
    the input channels is used.
    """
    b = matrix_baseline(raw_input.channels) if baseline is None else float(baseline)
    return predict_batch(model, stats, raw_input.channels[None], [b])[0]


@dataclass
class SurrogateModel:
    network: Network
    stats: NormalizationStats

    def predict_fields(self, fields: Sequence[TensorGrid], baselines: Sequence[float]) -> np.ndarray:
        if not fields:
            return np.empty((0, 6))
        chans = np.stack([f.channels for f in fields])
        return predict_batch(self.network, self.stats, chans, baselines)

    def save(self, path) -> None:
        save_weights(self.network, path, self.stats.to_json())

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        net, stats_json = load_weights(path)
        if not stats_json:
            raise ParameterError(f"{path} carries no normalization stats")
        return cls(net, NormalizationStats.from_json(stats_json))
