"""Shared builders for gradient-check cases.

Each case builder takes a numpy Generator and returns (loss_fn, tensors):
a zero-argument function producing a scalar Tensor and the leaves to check.
Non-scalar primitive outputs are contracted with a fixed random tensor so
the whole Jacobian is exercised.
"""

import numpy as np

from gluq import autodiff as ad
from gluq.autodiff import Tensor


def _dims(rng, n, lo=2, hi=8):
    return [int(v) for v in rng.integers(lo, hi + 1, size=n)]


def _contract(out_fn, rng):
    probe = None

    def loss():
        nonlocal probe
        out = out_fn()
        if probe is None:
            probe = Tensor(rng.standard_normal(out.shape))
        return ad.sum_(ad.mul(out, probe))
    return loss


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.standard_normal(shape)
    return x + np.where(x >= 0, gap, -gap)


def case_conv2d(rng):
    b, c, o = _dims(rng, 3, 1, 3)
    h, w = _dims(rng, 2, 3, 8)
    k = int(rng.choice([1, 3]))
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    wt = Tensor(rng.standard_normal((o, c, k, k)), requires_grad=True)
    bias = Tensor(rng.standard_normal(o), requires_grad=True)
    return _contract(lambda: ad.conv2d(x, wt, bias), rng), [x, wt, bias]


def case_conv_transpose2d(rng):
    b, c, o = _dims(rng, 3, 1, 3)
    h, w = _dims(rng, 2, 1, 4)
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    wt = Tensor(rng.standard_normal((c, o, 2, 2)), requires_grad=True)
    bias = Tensor(rng.standard_normal(o), requires_grad=True)
    return _contract(lambda: ad.conv_transpose2d(x, wt, bias), rng), [x, wt, bias]


def case_maxpool2d(rng):
    b, c = _dims(rng, 2, 1, 3)
    h, w = _dims(rng, 2, 2, 8)
    # well-separated values so no perturbation changes the argmax
    vals = rng.permutation(b * c * h * w).astype(float) * 0.1
    x = Tensor(vals.reshape(b, c, h, w), requires_grad=True)
    return _contract(lambda: ad.maxpool2d(x), rng), [x]


def case_upsample_bilinear(rng):
    b, c = _dims(rng, 2, 1, 3)
    h, w = _dims(rng, 2, 2, 6)
    th, tw = _dims(rng, 2, 2, 8)
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    return _contract(lambda: ad.upsample_bilinear(x, size=(th, tw)), rng), [x]


def case_batchnorm_train(rng):
    b = int(rng.integers(2, 5))
    c, h, w = _dims(rng, 3, 1, 5)
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    g = Tensor(rng.standard_normal(c), requires_grad=True)
    beta = Tensor(rng.standard_normal(c), requires_grad=True)
    rm, rv = np.zeros(c), np.ones(c)
    return _contract(lambda: ad.batchnorm2d(x, g, beta, rm, rv, training=True,
                                            update_stats=False), rng), [x, g, beta]


def case_batchnorm_eval(rng):
    b, c, h, w = _dims(rng, 4, 1, 5)
    x = Tensor(rng.standard_normal((b, c, h, w)), requires_grad=True)
    g = Tensor(rng.standard_normal(c), requires_grad=True)
    beta = Tensor(rng.standard_normal(c), requires_grad=True)
    rm, rv = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
    return _contract(lambda: ad.batchnorm2d(x, g, beta, rm, rv, training=False), rng), [x, g, beta]


def case_relu(rng):
    x = Tensor(_away_from_zero(rng, _dims(rng, 2)), requires_grad=True)
    return _contract(lambda: ad.relu(x), rng), [x]


def case_concat(rng):
    b, c1, c2, h = _dims(rng, 4, 1, 4)
    x = Tensor(rng.standard_normal((b, c1, h, h)), requires_grad=True)
    y = Tensor(rng.standard_normal((b, c2, h, h)), requires_grad=True)
    return _contract(lambda: ad.concat(x, y, axis=1), rng), [x, y]


def case_linear(rng):
    b, i, o = _dims(rng, 3, 1, 8)
    x = Tensor(rng.standard_normal((b, i)), requires_grad=True)
    wt = Tensor(rng.standard_normal((o, i)), requires_grad=True)
    bias = Tensor(rng.standard_normal(o), requires_grad=True)
    return _contract(lambda: ad.linear(x, wt, bias), rng), [x, wt, bias]


def case_add(rng):
    shape = _dims(rng, 3, 1, 6)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    y = Tensor(rng.standard_normal(shape[1:]), requires_grad=True)
    return _contract(lambda: ad.add(x, y), rng), [x, y]


def case_mul(rng):
    shape = _dims(rng, 3, 1, 6)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    y = Tensor(rng.standard_normal((shape[0], 1, shape[2])), requires_grad=True)
    return _contract(lambda: ad.mul(x, y), rng), [x, y]


def case_square(rng):
    x = Tensor(rng.standard_normal(_dims(rng, 2)), requires_grad=True)
    return _contract(lambda: ad.square(x), rng), [x]


def case_log(rng):
    x = Tensor(rng.uniform(0.5, 3.0, _dims(rng, 2)), requires_grad=True)
    return _contract(lambda: ad.log(x), rng), [x]


def case_reciprocal(rng):
    x = Tensor(rng.uniform(0.5, 3.0, _dims(rng, 2)) * rng.choice([-1, 1], 1), requires_grad=True)
    return _contract(lambda: ad.reciprocal(x), rng), [x]


def case_abs_sum(rng):
    x = Tensor(_away_from_zero(rng, _dims(rng, 2)), requires_grad=True)
    return (lambda: ad.abs_sum(x)), [x]


def case_clamp(rng):
    raw = rng.uniform(-3, 3, _dims(rng, 2))
    raw = np.where(np.abs(np.abs(raw) - 1.0) < 0.05, raw * 1.2, raw)
    x = Tensor(raw, requires_grad=True)
    return _contract(lambda: ad.clamp(x, lo=-1.0, hi=1.0), rng), [x]


def case_sum(rng):
    shape = _dims(rng, 3, 1, 6)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    axis = int(rng.integers(0, 3))
    return _contract(lambda: ad.sum_(x, axis=axis), rng), [x]


def case_gather_rows(rng):
    k, r, d, b = _dims(rng, 4, 1, 6)
    table = Tensor(rng.standard_normal((k, r, d)), requires_grad=True)
    index = rng.integers(0, r, size=(b, k))
    return _contract(lambda: ad.gather_rows(table, index), rng), [table]


def case_reshape(rng):
    a, b = _dims(rng, 2)
    x = Tensor(rng.standard_normal((a, b)), requires_grad=True)
    return _contract(lambda: ad.reshape(x, (b, a)), rng), [x]


def case_mse(rng):
    shape = _dims(rng, 3, 1, 5)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    y = Tensor(rng.standard_normal(shape), requires_grad=True)
    return (lambda: ad.mse(x, y)), [x, y]


PRIMITIVE_CASES = {
    "conv2d": case_conv2d,
    "conv_transpose2d": case_conv_transpose2d,
    "maxpool2d": case_maxpool2d,
    "upsample_bilinear": case_upsample_bilinear,
    "batchnorm2d[train]": case_batchnorm_train,
    "batchnorm2d[eval]": case_batchnorm_eval,
    "relu": case_relu,
    "concat": case_concat,
    "linear": case_linear,
    "add": case_add,
    "mul": case_mul,
    "square": case_square,
    "log": case_log,
    "reciprocal": case_reciprocal,
    "abs_sum": case_abs_sum,
    "clamp": case_clamp,
    "sum": case_sum,
    "gather_rows": case_gather_rows,
    "reshape": case_reshape,
    "mse": case_mse,
}
