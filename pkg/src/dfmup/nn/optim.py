"""Adam optimizer and reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}, self.t)

    def to_arrays(self) -> dict:
        out = {"t": np.array(self.t)}
        out.update({f"m/{k}": a for k, a in self.m.items()})
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: dict) -> "AdamState":
        st = cls(t=int(arrays["t"]))
        for key, a in arrays.items():
            if key.startswith("m/"):
                st.m[key[2:]] = np.array(a)
            elif key.startswith("v/"):
                st.v[key[2:]] = np.array(a)
        return st


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def init(self, params: dict) -> AdamState:
        return AdamState({k: np.zeros_like(p) for k, p in params.items()},
                         {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def step(self, params: dict, grads: dict, state: AdamState, lr: float) -> None:
        """Bias-corrected Adam update, in place on params and state."""
        state.t += 1
        c1 = 1.0 - self.beta1 ** state.t
        c2 = 1.0 - self.beta2 ** state.t
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = state.m[k], state.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, optimizer: Adam = Adam()) -> AdamState:
    optimizer.step(params, grads, state, lr)
    return state


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a new best loss."""

    lr: float
    factor: float = 0.5
    patience: int = 10
    best: float = float("inf")
    stale: int = 0

    def step(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr
