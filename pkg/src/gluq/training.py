"""Minibatch training of GLU-Net and the global error metrics."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward
from .errors import ConfigError, NumericFailure, ShapeError, UndefinedScore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSpec:
    """Optimiser schedule: ``lr`` for epochs 1..lr_switch, ``lr_after`` afterwards."""

    epochs: int = 150
    lr: float = 1e-3
    lr_after: float = 5e-4
    lr_switch: int = 100
    weight_decay: float = 1e-5
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 1 <= self.lr_switch <= self.epochs:
            raise ConfigError(f"lr switch epoch {self.lr_switch} outside [1, {self.epochs}]")

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``."""
        return self.lr if epoch <= self.lr_switch else self.lr_after


@dataclass
class Standardizer:
    """Scalar standardisation of log K and per-field standardisation of (P, U, V)."""

    k_mean: float
    k_std: float
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, K, Y):
        logk = np.log(K)
        y_std = Y.std(axis=(0, 2, 3))
        if logk.std() == 0 or np.any(y_std == 0):
            raise ConfigError("cannot standardise constant inputs or outputs")
        return cls(float(logk.mean()), float(logk.std()), Y.mean(axis=(0, 2, 3)), y_std)

    def inputs(self, K):
        """(N, n, n) permeability -> (N, 1, n, n) standardised log K."""
        K = np.asarray(K, dtype=float)
        return ((np.log(K) - self.k_mean) / self.k_std)[:, None]

    def targets(self, Y):
        return (Y - self.y_mean[:, None, None]) / self.y_std[:, None, None]

    def restore(self, Yn):
        return Yn * self.y_std[:, None, None] + self.y_mean[:, None, None]

    def to_dict(self):
        return {"k_mean": self.k_mean, "k_std": self.k_std,
                "y_mean": self.y_mean.tolist(), "y_std": self.y_std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["k_mean"]), float(d["k_std"]), np.asarray(d["y_mean"], float),
                   np.asarray(d["y_std"], float))


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)   # (epoch, lr, train_mse, test_mse)
    optimizer: AdamState = None

    @property
    def train_mse(self):
        return np.array([row[2] for row in self.curve])

    @property
    def test_mse(self):
        return np.array([row[3] for row in self.curve])


def _batches(n, size, rng):
    order = rng.permutation(n)
    cuts = list(range(0, n, size))
    parts = [order[c:c + size] for c in cuts]
    # batch norm needs at least two samples; fold a trailing singleton back in
    if len(parts) > 1 and len(parts[-1]) == 1:
        tail = parts.pop()
        parts[-1] = np.concatenate([parts[-1], tail])
    return parts


def evaluate(model, X, Y, batch=50):
    """Eval-mode MSE on standardised data."""
    total = 0.0
    for s in range(0, len(X), batch):
        pred = model.forward(X[s:s + batch], training=False).Y.data
        total += ((pred - Y[s:s + batch]) ** 2).sum()
    return total / Y.size


def predict(model, X, batch=50):
    return np.concatenate([model.forward(X[s:s + batch], training=False).Y.data
                           for s in range(0, len(X), batch)])


def train(model, train_data, spec=TrainSpec(), test_data=None, on_epoch=None):
    """Train on standardised ``(X, Y)`` arrays; returns the loss curve.

    ``train_mse`` is the sample-weighted average of minibatch losses over the
    epoch (train mode); ``test_mse`` is an eval-mode pass over ``test_data``
    (NaN when absent). Aborts when the epoch loss stays above ten times the
    first epoch's for five epochs in a row.
    """
    X, Y = train_data
    if len(X) < 2:
        raise ConfigError("training needs at least two samples (batch norm)")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("train", f"{X.shape[0]} inputs vs {Y.shape[0]} targets")
    state = AdamState(lr=spec.lr, weight_decay=spec.weight_decay)
    params = model.parameters()
    result = TrainResult(optimizer=state)
    initial, strikes = None, 0
    for epoch in range(1, spec.epochs + 1):
        state.lr = spec.lr_at(epoch)
        rng = np.random.default_rng((spec.seed, epoch))
        running = 0.0
        for b, idx in enumerate(_batches(len(X), spec.batch_size, rng)):
            try:
                out = model.forward(X[idx], training=True)
                loss = ad.mse(out.Y, Tensor(Y[idx]))
            except NumericFailure as exc:
                raise type(exc)(f"epoch {epoch}, batch {b}: {exc}", log=result.curve) from None
            grads = backward(loss)
            adam_step(state, params, grads)
            model.project()
            running += loss.item() * len(idx)
        train_mse = running / len(X)
        test_mse = evaluate(model, *test_data) if test_data is not None else float("nan")
        result.curve.append((epoch, state.lr, train_mse, test_mse))
        log.info("epoch %d lr %.1e train %.4e test %.4e", epoch, state.lr, train_mse, test_mse)
        if on_epoch is not None:
            on_epoch(epoch, train_mse, test_mse)
        if initial is None:
            initial = train_mse
        strikes = strikes + 1 if train_mse > 10 * initial else 0
        if strikes >= 5:
            raise NumericFailure(f"training diverged at epoch {epoch}: loss {train_mse:.3e} "
                                 f"vs initial {initial:.3e}", log=result.curve)
    return result


def mse_metric(y, y_pred):
    """Mean of squared differences over fields and pixels (and samples, if batched)."""
    y, y_pred = np.asarray(y, float), np.asarray(y_pred, float)
    if y.shape != y_pred.shape:
        raise ShapeError("mse_metric", f"{y.shape} vs {y_pred.shape}")
    return float(np.mean((y - y_pred) ** 2))


def r2_metric(pred, truth, per_field=False):
    """Coefficient of determination over a set of simulations.

    ``pred`` and ``truth`` have shape (S, F, n, n); the reference predictor
    is the per-(field, pixel) mean of ``truth`` over simulations. With
    ``per_field`` an array of F scores is returned.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ShapeError("r2_metric", f"{pred.shape} vs {truth.shape}")
    if truth.ndim < 2 or truth.shape[0] < 2:
        raise ShapeError("r2_metric", "need at least two simulations")
    axes = tuple(i for i in range(truth.ndim) if i != 1) if per_field else None
    ss_res = ((truth - pred) ** 2).sum(axis=axes)
    ss_tot = ((truth - truth.mean(axis=0)) ** 2).sum(axis=axes)
    if np.any(ss_tot == 0):
        raise UndefinedScore("R^2 undefined: truths are constant across simulations")
    return 1.0 - ss_res / ss_tot


def field_r2(pred_field, true_field):
    """R^2 between two single images, reference = spatial mean of ``true_field``."""
    pred_field, true_field = np.asarray(pred_field, float), np.asarray(true_field, float)
    if pred_field.shape != true_field.shape:
        raise ShapeError("field_r2", f"{pred_field.shape} vs {true_field.shape}")
    ss_tot = ((true_field - true_field.mean()) ** 2).sum()
    if ss_tot == 0:
        raise UndefinedScore("R^2 undefined: reference field is constant")
    return float(1.0 - ((true_field - pred_field) ** 2).sum() / ss_tot)
