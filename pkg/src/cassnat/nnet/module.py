"""Parameter containers."""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError
from ..numcore import Tensor, ops


class Module:
    """Base class: walks attributes to find parameters and child modules.

    Dropout randomness comes from one generator shared by the whole tree,
    installed with :meth:`set_rng`.
    """

    training: bool = True
    rng: np.random.Generator | None = None

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
        for name, child in self.children():
            out.update(child.parameters(prefix + name + "."))
        return out

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, flag: bool = True) -> Module:
        for m in self.modules():
            m.training = flag
        return self

    def eval(self) -> Module:
        return self.train(False)

    def set_rng(self, rng: np.random.Generator | None) -> Module:
        for m in self.modules():
            m.rng = rng
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        missing = [k for k in params if k not in state]
        if strict and missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for k, p in params.items():
            if k not in state:
                continue
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise CheckpointError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> Module:
        """Cast every parameter, e.g. to float32 for inference-only runs."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self

    def dropout(self, x: Tensor, p: float) -> Tensor:
        return ops.dropout(x, p, self.rng, self.training)


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def xavier(rng: np.random.Generator, d_in: int, d_out: int, *shape_prefix: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(*shape_prefix, d_in, d_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(xavier(rng, d_in, d_out))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = param(np.ones(d))
        self.bias = param(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)
