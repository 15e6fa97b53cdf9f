"""End-to-end experiment drivers shared by the acceptance suite and the demos."""

import logging
import time

import numpy as np

from .darcy import SourceSpec, generate_dataset, stack_samples
from .glu_net import GLUNetConfig, build_model
from .random_field import ExpKernel, Grid2D, kle_decompose
from .reports import moment_r2_row
from .training import Standardizer, TrainSpec, predict, r2_metric, train
from .uq import mcs_benchmark, propagate_aleatoric

log = logging.getLogger(__name__)

DESK_SPEC = TrainSpec(epochs=60, lr_switch=40)


def make_data(n, q, n_train, n_test, seed, source=SourceSpec(), workers=None):
    """Basis plus disjoint train/test sets drawn from one sample stream."""
    basis = kle_decompose(Grid2D(n), ExpKernel(), q)
    tr = stack_samples(generate_dataset(basis, n_train, seed, source, workers=workers))
    te = stack_samples(generate_dataset(basis, n_test, seed, source, workers=workers, start=n_train))
    return basis, tr, te


def fit(config, K, Y, spec, seed, test=None):
    """Train a fresh model on physical (K, Y); returns (model, standardiser, result)."""
    norm = Standardizer.fit(K, Y)
    model = build_model(config, seed=seed)
    model.norm = norm.to_dict()
    test_data = None if test is None else (norm.inputs(test[0]), norm.targets(test[1]))
    result = train(model, (norm.inputs(K), norm.targets(Y)), spec, test_data=test_data)
    return model, norm, result


def predict_fields(model, norm, K):
    return norm.restore(predict(model, norm.inputs(K)))


def desk_trial(seed, sizes=(32, 128), n=33, q=32, n_test=100, spec=DESK_SPEC, config=None):
    """Train one model per training-set size on nested subsets of one dataset.

    Test MSE is reported on a shared scale (fields standardised with the
    statistics of the largest training set) so sizes are comparable.
    """
    config = config or GLUNetConfig.desk(n)
    _, (K, Y, _), (Kt, Yt, _) = make_data(n, q, max(sizes), n_test, seed)
    ref = Standardizer.fit(K, Y)
    out = {}
    for size in sizes:
        t0 = time.perf_counter()
        model, norm, result = fit(config, K[:size], Y[:size], spec, seed)
        pred = predict_fields(model, norm, Kt)
        out[size] = {
            "test_mse": float(np.mean((ref.targets(pred) - ref.targets(Yt)) ** 2)),
            "r2": r2_metric(pred, Yt, per_field=True),
            "train_mse": result.curve[-1][2],
            "seconds": time.perf_counter() - t0,
        }
        log.info("seed %d size %d: %s", seed, size, out[size])
    return out


def full_scale(seed=0, n_train=256, n_test=500, q=50, n_sim=10000, mcs_n=10000, workers=None,
                spec=TrainSpec(), config=None):
    """KLE50 on 65x65: test R^2 per field and moment-field R^2 against the solver."""
    config = config or GLUNetConfig()
    basis, (K, Y, _), (Kt, Yt, _) = make_data(65, q, n_train, n_test, seed, workers=workers)
    model, norm, result = fit(config, K, Y, spec, seed)
    r2 = r2_metric(predict_fields(model, norm, Kt), Yt, per_field=True)
    sur = propagate_aleatoric(model, basis, n_sim, seed + 1)
    mcs = mcs_benchmark(basis, mcs_n, seed + 1, workers=workers)
    return {"r2": r2, "moments": moment_r2_row(sur, mcs), "curve": result.curve}
