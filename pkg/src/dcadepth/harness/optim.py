"""AdamW with decoupled weight decay and the per-epoch exponential LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import Tensor


class MissingGradientError(RuntimeError):
    def __init__(self, name: str):
        super().__init__(f"parameter {name!r} has no gradient")
        self.name = name


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One in-place AdamW update of every parameter in ``params``."""
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(name)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad.astype(p.data.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p.data -= (state.lr * state.weight_decay) * p.data
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_at_epoch(epoch: int, base_lr: float = 1e-4, decay: float = 0.97) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * decay ** epoch
