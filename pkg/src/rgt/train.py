"""L1 training with Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Collection, Sequence

import numpy as np

from .config import ModelConfig
from .model import rgt_forward
from .tensor import NumericError, Tensor, l1_loss
from .weights import WeightStore

MILESTONES = (250_000, 400_000, 450_000, 475_000)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step over the parameters present in ``grads``."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m, v = dict(state.m), dict(state.v)
    out = dict(params)
    c1, c2 = 1 - b1**t, 1 - b2**t
    for k, g in grads.items():
        m[k] = b1 * m.get(k, 0.0) + (1 - b1) * g
        v[k] = b2 * v.get(k, 0.0) + (1 - b2) * g * g
        out[k] = params[k] - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
    return out, AdamState(t, m, v, b1, b2, state.eps)


def multistep_lr(step: int, base: float = 2e-4, milestones: Sequence[int] = MILESTONES, gamma: float = 0.5) -> float:
    return base * gamma ** sum(step >= s for s in milestones)


def _stack(batch) -> tuple[np.ndarray, np.ndarray]:
    lrs = np.stack([np.asarray(getattr(a, "data", a), dtype=np.float64) for a, _ in batch])
    hrs = np.stack([np.asarray(getattr(b, "data", b), dtype=np.float64) for _, b in batch])
    return lrs, hrs


def loss_and_grads(
    cfg: ModelConfig,
    weights: WeightStore,
    batch: Sequence[tuple[np.ndarray, np.ndarray]],
    frozen: Collection[str] = (),
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean absolute error over the batch and its gradient for every non-frozen parameter."""
    lrs, hrs = _stack(batch)
    r = cfg.scale
    if hrs.shape[1:3] != (lrs.shape[1] * r, lrs.shape[2] * r):
        raise ValueError(f"HR shape {hrs.shape[1:3]} inconsistent with LR {lrs.shape[1:3]} at x{r}")
    leaves = {k: Tensor(v.data, requires_grad=k not in frozen) for k, v in weights.items()}
    loss = l1_loss(rgt_forward(Tensor(lrs), WeightStore(leaves), cfg), hrs)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite training loss {value}")
    loss.backward()
    grads = {}
    for k, t in leaves.items():
        if t.requires_grad:
            grads[k] = t.grad.data if t.grad is not None else np.zeros(t.shape)
    return value, grads


def train_step(
    cfg: ModelConfig,
    weights: WeightStore,
    batch: Sequence[tuple[np.ndarray, np.ndarray]],
    opt_state: AdamState,
    lr_rate: float,
    frozen: Collection[str] = (),
) -> tuple[float, WeightStore, AdamState]:
    """Forward, L1 loss, backward and one Adam update. Returns the pre-update loss."""
    loss, grads = loss_and_grads(cfg, weights, batch, frozen)
    params = {k: v.data for k, v in weights.items()}
    new, state = adam_update(params, grads, opt_state, lr_rate)
    return loss, WeightStore({k: Tensor(a) for k, a in new.items()}), state


def overfit(
    cfg: ModelConfig,
    weights: WeightStore,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    steps: int,
    lr_rate: float,
    target: float | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> tuple[list[float], WeightStore]:
    """Full-batch training on fixed ``pairs``; stops early once the loss drops below ``target``."""
    state = AdamState()
    losses: list[float] = []
    for step in range(steps):
        loss, weights, state = train_step(cfg, weights, pairs, state, lr_rate)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
        if target is not None and loss < target:
            break
    return losses, weights
