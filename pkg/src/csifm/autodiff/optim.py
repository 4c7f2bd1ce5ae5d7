"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """AdamW over a named parameter dict.

    Weight decay multiplies the parameter directly (``p -= lr * wd * p``) and never
    enters the moment estimates.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = dict(params)
        self.state = AdamWState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        st = self.state
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"adamw_step: no gradient for {missing[:5]}")
        st.step += 1
        b1, b2 = st.betas
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for name, p in self.params.items():
            g = p.grad
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if st.weight_decay:
                p.data *= 1.0 - st.lr * st.weight_decay
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)

    # checkpoint plumbing
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"m/{name}"] = self.state.m[name]
            out[f"v/{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for name in self.params:
            self.state.m[name] = np.array(arrays[f"m/{name}"], dtype=np.float64)
            self.state.v[name] = np.array(arrays[f"v/{name}"], dtype=np.float64)
        self.state.step = int(step)


def adamw_step(params: dict[str, Tensor], state: AdamWState) -> AdamWState:
    """Functional form: one AdamW update of ``params`` in place using ``state``."""
    opt = AdamW.__new__(AdamW)
    opt.params = dict(params)
    for name, p in opt.params.items():
        state.m.setdefault(name, np.zeros_like(p.data))
        state.v.setdefault(name, np.zeros_like(p.data))
    opt.state = state
    opt.step()
    return state
