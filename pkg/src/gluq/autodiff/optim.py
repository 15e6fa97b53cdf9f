"""Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericFailure, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment accumulators and hyper-parameters for Adam.

    Weight decay is the coupled (L2) form: ``weight_decay * theta`` is added
    to the gradient before the moment updates.
    """

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Update ``params`` (Tensors, in place) from ``grads`` (param -> array or Tensor).

    Parameters missing from ``grads`` are treated as having zero gradient.
    Moments are keyed by position in ``params``, so the list order must be
    stable between calls.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError("adam_step", f"gradient {g.shape} != parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericFailure(f"adam_step: non-finite parameter at index {i}")
    return params
