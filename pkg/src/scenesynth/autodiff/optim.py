"""RMSProp updates and critic weight clipping."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import AutodiffError, NonFiniteError, ShapeError
from .tensor import Tensor

DEFAULT_LR = 5e-5
DEFAULT_DECAY = 0.9
RMS_EPSILON = 1e-8


@dataclass
class OptimizerState:
    """Per-parameter squared-gradient accumulators."""

    lr: float = DEFAULT_LR
    decay: float = DEFAULT_DECAY
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float | None = None,
    decay: float | None = None,
) -> None:
    """acc <- decay*acc + (1-decay)*g^2;  p <- p - lr*g/sqrt(acc + 1e-8), in place."""
    lr = state.lr if lr is None else lr
    decay = state.decay if decay is None else decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"Gradient for {name}: expected {p.shape}, got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"Non-finite gradient for {name}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(p.data)
        elif acc.shape != p.shape:
            raise ShapeError(f"Accumulator for {name}: expected {p.shape}, got {acc.shape}")
        acc = decay * acc + (1.0 - decay) * g * g
        state.accumulators[name] = acc.astype(p.dtype)
        p.data = (p.data - lr * g / np.sqrt(acc + RMS_EPSILON)).astype(p.dtype)


def clip_weights(params, c: float) -> None:
    """Clamp every entry to [-c, c] in place."""
    if not c > 0:
        raise AutodiffError(f"Clip bound must be > 0, got {c}")
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        np.clip(p.data, -c, c, out=p.data)
