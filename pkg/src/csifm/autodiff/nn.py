"""Small module system and transformer building blocks on top of the tape."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container.

    Parameters are the ``Tensor`` attributes (frozen ones included); child
    modules and lists of modules are traversed in attribute-definition order,
    so names are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters() if v.requires_grad}

    def freeze(self) -> None:
        for p in self.parameters().values():
            p.requires_grad = False
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        from ..errors import DimensionError

        params = self.parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            if missing:
                raise KeyError(f"missing parameters in state: {missing[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(
                    f"parameter {name}: checkpoint shape {arr.shape} vs model shape {p.shape}")
            p.data = arr.copy()


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(6.0 / (n_in + n_out))
        self.weight = param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        lead = x.shape[:-1]
        if len(lead) > 1:
            x = x.reshape(-1, x.shape[-1])
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(*lead, y.shape[-1]) if len(lead) > 1 else y


class MLP(Module):
    """Two-layer perceptron with GELU in between."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self._eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self._eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            from ..errors import ConfigError

            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self._heads = heads
        self._dim = dim

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self._heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + mlp(ln(x))``."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, ff_mult * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


def sinusoidal_table(n_pos: int, dim: int) -> np.ndarray:
    """Rows ``PE[p, 2i] = sin(p / 10000^(2i/dim))``, ``PE[p, 2i+1] = cos(...)``."""
    pos = np.arange(n_pos)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    table = np.zeros((n_pos, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim // 2])
    return table
