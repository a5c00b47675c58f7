"""Adam and the warmup / hold / exponential-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class Schedule:
    warmup_steps: int = 500
    peak_lr: float = 1e-3
    hold_steps: int = 0
    decay_steps: int = 5000
    final_lr: float = 1e-5

    def lr(self, step: int) -> float:
        """Learning rate for 1-based ``step``."""
        if step <= self.warmup_steps:
            return self.peak_lr * step / max(1, self.warmup_steps)
        step -= self.warmup_steps
        if step <= self.hold_steps:
            return self.peak_lr
        frac = min(1.0, (step - self.hold_steps) / max(1, self.decay_steps))
        return self.peak_lr * math.exp(frac * math.log(self.final_lr / self.peak_lr))


class Adam:
    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.98), eps: float = 1e-9, clip_norm: float | None = 5.0):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / (norm + 1e-12)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = grads[k] * factor
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = arrays[f"adam.m.{k}"].copy()
            self.v[k] = arrays[f"adam.v.{k}"].copy()
        self.t = int(arrays["adam.t"][0])
