"""Gaussian gated linear networks.

A neuron mixes the Gaussians of the previous layer with a weighted product
of Gaussians. The weight vector is one row of a ``2^m x k_in`` table, picked
by ``m`` half-space tests on a shared context vector. Two execution modes
share the same mixing rule:

* online: closed-form local gradient and projected step per neuron;
* differentiable: weights and inputs are autodiff Tensors, used when the
  network sits inside a larger model.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DegenerateMixture, NumericFailure, ShapeError

BASE_VARIANCE = 0.01
VAR_RANGE = (0.5, 1e5)
WEIGHT_RANGE = (-1000.0, 1000.0)
# |b| <= 0.674 keeps P(z.v >= b) within [0.25, 0.75] for unit v and z ~ N(0, I)
OFFSET_BOUND = 0.674


@dataclass(frozen=True)
class GaussianPair:
    mu: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ConfigError(f"variance must be positive, got {self.var}")

    @property
    def precision(self):
        return 1.0 / self.var


def _as_arrays(inputs):
    mu = np.array([g.mu for g in inputs], dtype=float)
    var = np.array([g.var for g in inputs], dtype=float)
    return mu, var


def _mix(mu, var, w, var_range=None, mean_range=None):
    """Vectorised PoG over the last axis. Returns (mu_pog, var_pog, var_raw).

    With ``mean_range`` the mean and variance are projected separately: the
    mean is taken from the unclipped mixture and then clipped.
    """
    eta = w / var
    total = eta.sum(axis=-1)
    if np.any(total == 0):
        raise DegenerateMixture("product of Gaussians has zero total precision")
    raw = 1.0 / total
    if var_range is None:
        if np.any(raw <= 0):
            raise DegenerateMixture("product of Gaussians has negative total precision")
        v = raw
    else:
        v = np.clip(raw, *var_range)
    if mean_range is not None:
        return np.clip(raw * (eta * mu).sum(axis=-1), *mean_range), v, raw
    return v * (eta * mu).sum(axis=-1), v, raw


def pog_mix(inputs, w, var_range=None):
    """Weighted product of Gaussians ``prod_i f_i(y)^{w_i}``, renormalised.

    Precision is ``sum_i w_i / var_i``. With ``var_range`` the variance is
    clipped after mixing and the mean rescaled accordingly.
    """
    mu, var = _as_arrays(inputs)
    w = np.asarray(w, dtype=float)
    if w.shape != mu.shape:
        raise ShapeError("pog_mix", f"{len(mu)} inputs but {w.size} weights")
    m, v, _ = _mix(mu, var, w, var_range)
    return GaussianPair(float(m), float(v))


def local_loss(y, inputs, w, var_range=None, form="variance"):
    """Negative log-likelihood of ``y`` (up to constants) under the mixed Gaussian.

    ``form="variance"`` evaluates ``log s2 + (y - mu)^2 / s2``; ``form="eta"``
    uses the precision-weighted parametrisation ``eta = w / var``. The two
    agree whenever the variance is not clipped.
    """
    mu, var = _as_arrays(inputs)
    w = np.asarray(w, dtype=float)
    if form == "variance":
        m, v, _ = _mix(mu, var, w, var_range)
        return float(np.log(v) + (y - m) ** 2 / v)
    if form == "eta":
        eta = w / var
        s = eta.sum()
        if s <= 0:
            raise DegenerateMixture("eta form needs positive total precision")
        return float(-np.log(s) + (y - eta @ mu / s) ** 2 * s)
    raise ValueError(f"unknown loss form {form!r}")


def _grad_w(y, mu, var, w, var_range):
    """Loss gradient in the weights; all arrays broadcast over leading axes."""
    m, v, raw = _mix(mu, var, w, var_range)
    m = m[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    free = (y - m) * (y + m - 2.0 * mu) - v[..., None]
    if var_range is None:
        return free / var
    # clipped variance is a constant, so only the mean depends on w
    clipped = -2.0 * (y - m) * mu
    inside = ((raw >= var_range[0]) & (raw <= var_range[1]))[..., None]
    return np.where(inside, free, clipped) / var


def loss_gradient(y, inputs, w, var_range=None):
    """Closed-form gradient of :func:`local_loss` with respect to ``w``."""
    mu, var = _as_arrays(inputs)
    return _grad_w(y, mu, var, np.asarray(w, dtype=float), var_range)


def hessian_eta(y, inputs, w):
    """Analytic Hessian of the eta-form loss in ``eta``.

    ``|eta|^-2 * 11^T + 2 |eta|^-1 (mu - mu_pog)(mu - mu_pog)^T``. The
    target enters only through the mixed mean, which it does not.
    """
    mu, var = _as_arrays(inputs)
    eta = np.asarray(w, dtype=float) / var
    s = eta.sum()
    d = mu - eta @ mu / s
    return np.full((mu.size, mu.size), 1.0 / s**2) + (2.0 / s) * np.outer(d, d)


@dataclass
class HalfSpaceGate:
    """``m`` hyperplanes; bit ``j`` of the context is set when ``z . v_j >= b_j``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        self.offsets = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if self.offsets.shape != (self.normals.shape[0],):
            raise ShapeError("HalfSpaceGate", f"{self.normals.shape[0]} normals, {self.offsets.size} offsets")
        if np.any(np.linalg.norm(self.normals, axis=1) == 0):
            raise ConfigError("gate normals must be nonzero")

    @property
    def m(self):
        return self.normals.shape[0]

    @property
    def dim(self):
        return self.normals.shape[1]

    @classmethod
    def random(cls, dim, m, rng):
        v = rng.standard_normal((m, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        b = truncnorm.rvs(-OFFSET_BOUND, OFFSET_BOUND, size=m, random_state=rng)
        return cls(v, b)

    def bits(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ShapeError("context_index", f"context has dim {z.shape[-1]}, gate expects {self.dim}")
        return z @ self.normals.T >= self.offsets

    def index(self, z):
        return self.bits(z) @ (1 << np.arange(self.m))


def context_index(gate, z):
    """Row of the weight table selected by context ``z`` (c_1 is the low bit)."""
    idx = gate.index(z)
    return int(idx) if np.ndim(idx) == 0 else idx


@dataclass
class GGLNLayer:
    """Fully connected layer of gated PoG neurons, one gate per neuron.

    ``weights`` has shape (n_out, 2^m, n_in).
    """

    weights: np.ndarray
    gates: list
    weight_range: tuple = WEIGHT_RANGE
    var_range: tuple = VAR_RANGE
    mean_range: tuple = None

    def __post_init__(self):
        k, rows, _ = self.weights.shape
        if len(self.gates) != k:
            raise ShapeError("GGLNLayer", f"{k} neurons but {len(self.gates)} gates")
        for g in self.gates:
            if rows != 2 ** g.m:
                raise ShapeError("GGLNLayer", f"table has {rows} rows, gate needs {2 ** g.m}")
        self._normals = np.stack([g.normals for g in self.gates])
        self._offsets = np.stack([g.offsets for g in self.gates])

    @classmethod
    def random(cls, n_in, n_out, m, context_dim, rng, **kw):
        gates = [HalfSpaceGate.random(context_dim, m, rng) for _ in range(n_out)]
        w = rng.standard_normal((n_out, 2 ** m, n_in))
        layer = cls(w, gates, **kw)
        np.clip(layer.weights, *layer.weight_range, out=layer.weights)
        return layer

    @property
    def n_out(self):
        return self.weights.shape[0]

    @property
    def n_in(self):
        return self.weights.shape[2]

    @property
    def m(self):
        return self.gates[0].m

    def context_indices(self, context):
        """(B, n_out) selected rows for a (B, d) batch of contexts."""
        context = np.atleast_2d(context)
        if context.shape[-1] != self._normals.shape[2]:
            raise ShapeError("context_index", f"context dim {context.shape[-1]} != {self._normals.shape[2]}")
        bits = np.einsum("bd,kmd->bkm", context, self._normals) >= self._offsets
        return bits @ (1 << np.arange(self.m))

    def forward(self, mu, var, context):
        """Numpy forward on a batch: (B, n_in) inputs -> (mu, var, rows), each (B, n_out)."""
        if mu.shape[-1] != self.n_in:
            raise ShapeError("ggln_forward", f"layer expects {self.n_in} inputs, got {mu.shape[-1]}")
        rows = self.context_indices(context)
        w = self.weights[np.arange(self.n_out), rows]
        m, v, _ = _mix(mu[:, None, :], np.broadcast_to(var, mu.shape)[:, None, :], w, self.var_range, self.mean_range)
        return m, v, rows

    def forward_graph(self, mu, var, context, weights):
        """Differentiable forward; ``mu``/``var`` are (B, n_in) Tensors, ``weights`` the table Tensor."""
        if mu.shape[-1] != self.n_in:
            raise ShapeError("ggln_forward", f"layer expects {self.n_in} inputs, got {mu.shape[-1]}")
        b = mu.shape[0]
        rows = self.context_indices(context)
        w = ad.gather_rows(weights, rows)
        eta = ad.mul(w, ad.reshape(ad.reciprocal(var), (b, 1, self.n_in)))
        total = ad.sum_(eta, axis=2)
        if np.any(total.data == 0):
            raise DegenerateMixture("product of Gaussians has zero total precision")
        raw = ad.reciprocal(total)
        v = ad.clamp(raw, *self.var_range)
        num = ad.sum_(ad.mul(eta, ad.reshape(mu, (b, 1, self.n_in))), axis=2)
        if self.mean_range is not None:
            return ad.clamp(ad.mul(raw, num), *self.mean_range), v
        return ad.mul(v, num), v


def update_and_project(layer, neuron, row, grad, lr):
    """Gradient step on one weight row, then clip into the weight range."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericFailure(f"non-finite gradient for neuron {neuron}, row {row}", log=grad.tolist())
    w = layer.weights[neuron, row]
    w -= lr * grad
    np.clip(w, *layer.weight_range, out=w)
    return w.copy()


@dataclass
class GGLNNetwork:
    """Stack of GGLN layers over an identity base model with fixed variance."""

    layers: list
    base_variance: float = BASE_VARIANCE
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].n_in != self.layers[i - 1].n_out:
                raise ShapeError("GGLNNetwork", f"layer {i} expects {self.layers[i].n_in} inputs, "
                                 f"layer {i - 1} emits {self.layers[i - 1].n_out}")

    @classmethod
    def build(cls, input_dim, sizes, m=4, context_dim=None, seed=0, **layer_kw):
        rng = np.random.default_rng(seed)
        context_dim = input_dim if context_dim is None else context_dim
        layers, n_in = [], input_dim
        for k in sizes:
            layers.append(GGLNLayer.random(n_in, k, m, context_dim, rng, **layer_kw))
            n_in = k
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].n_in

    def _check_input(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.input_dim:
            raise ShapeError("ggln_forward", f"input dim {x.shape[-1]} != {self.input_dim}")
        return x

    def forward_arrays(self, x, context):
        """Per-layer (mu, var, rows) on a batch, base model first (rows None)."""
        mu = self._check_input(x)
        var = np.full_like(mu, self.base_variance)
        out = [(mu, var, None)]
        for layer in self.layers:
            mu, var, rows = layer.forward(mu, var, context)
            out.append((mu, var, rows))
        return out

    def predict(self, x, context=None):
        """Mean and variance of the last layer's first neuron, shape (B,)."""
        x = self._check_input(x)
        mu, var, _ = self.forward_arrays(x, x if context is None else context)[-1]
        return mu[:, 0], var[:, 0]

    def learn(self, x, y, context=None, lr=1e-3):
        """One online step: every neuron predicts ``y`` and updates its selected row."""
        x = self._check_input(x)[0]
        context = x if context is None else np.asarray(context, dtype=float)
        mu = x
        var = np.full_like(mu, self.base_variance)
        for layer in self.layers:
            rows = layer.context_indices(context)[0]
            w = layer.weights[np.arange(layer.n_out), rows]
            grad = _grad_w(np.full(layer.n_out, y), mu, var, w, layer.var_range)
            mu_next, var_next, _ = _mix(mu, var, w, layer.var_range)
            for k in range(layer.n_out):
                update_and_project(layer, k, rows[k], grad[k], lr)
            mu, var = mu_next, var_next
        return float(mu[0])

    def fit_online(self, X, Y, context=None, lr=1e-3):
        preds = np.empty(len(X))
        for i in range(len(X)):
            ctx = None if context is None else context[i]
            preds[i] = self.learn(X[i], Y[i], ctx, lr)
        self.history.extend((Y - preds).tolist())
        return preds


def ggln_forward(net, x, context, differentiable=False, weights=None):
    """Per-layer outputs for one input.

    Online mode returns a list of GaussianPair lists, base model first.
    Differentiable mode takes ``x`` as a (B, n_in) Tensor and ``weights``
    (one table Tensor per layer) and returns a list of (mu, var) Tensors.
    """
    if not differentiable:
        out = net.forward_arrays(x, np.atleast_2d(context))
        return [[GaussianPair(float(m), float(v)) for m, v in zip(mu[0], var[0])]
                for mu, var, _ in out]
    if x.shape[-1] != net.input_dim:
        raise ShapeError("ggln_forward", f"input dim {x.shape[-1]} != {net.input_dim}")
    weights = weights or [Tensor(layer.weights, requires_grad=True) for layer in net.layers]
    mu = x
    var = Tensor(np.full(x.shape, net.base_variance))
    out = [(mu, var)]
    for layer, w in zip(net.layers, weights):
        mu, var = layer.forward_graph(mu, var, context, w)
        out.append((mu, var))
    return out
