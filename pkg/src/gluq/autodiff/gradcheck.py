"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import backward


def numerical_grad(fn, tensor, step=1e-5, indices=None):
    """Central differences of scalar ``fn()`` with respect to ``tensor.data``.

    ``indices`` restricts the perturbation to a subset of flat positions;
    other entries of the result are left at zero.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(tensor.shape)


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, tensors, step=1e-5):
    """Max relative error between autodiff and finite differences over ``tensors``."""
    for t in tensors:
        t.grad = None
    grads = backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = grads[t].data if t in grads else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, t, step)))
    return worst
