import zlib

import numpy as np
import pytest

from gluq import autodiff as ad
from gluq.autodiff import AdamState, Tensor, adam_step, backward
from gluq.autodiff.gradcheck import check_gradients
from gluq.errors import NumericFailure, ShapeError

from helpers import PRIMITIVE_CASES


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        loss, tensors = PRIMITIVE_CASES[name](rng)
        assert check_gradients(loss, tensors) < 1e-5


def test_conv_identity_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 1, 5, 6)))
    delta = np.zeros((1, 1, 3, 3))
    delta[0, 0, 1, 1] = 1.0
    out = ad.conv2d(x, Tensor(delta), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_relu_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_maxpool_routes_gradient_to_argmax():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True)
    out = ad.maxpool2d(x)
    assert out.data.reshape(-1).tolist() == [4.0]
    grads = backward(ad.sum_(ad.scale(out, factor=2.5)))
    np.testing.assert_array_equal(grads[x].data, [[[[0, 0], [0, 2.5]]]])


def test_maxpool_floors_odd_extent():
    x = Tensor(np.zeros((1, 1, 65, 65)))
    assert ad.maxpool2d(x).shape == (1, 1, 32, 32)


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(1).standard_normal((3, 4, 2)), requires_grad=True)
    np.testing.assert_array_equal(backward(ad.sum_(x))[x].data, np.ones((3, 4, 2)))


def test_square_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    np.testing.assert_allclose(backward(ad.sum_(ad.square(x)))[x].data, [2.0, 4.0])


def test_gradients_accumulate_over_reuse():
    x = Tensor([1.5, -2.0], requires_grad=True)
    y = ad.add(ad.mul(x, x), x)
    np.testing.assert_allclose(backward(ad.sum_(y))[x].data, 2 * x.data + 1)


def test_non_participating_leaf_gets_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([3.0], requires_grad=True)
    grads = backward(ad.sum_(x))
    assert unused not in grads
    assert unused.grad is None


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ad.square(x))


def test_shape_error_names_primitive():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((3, 5, 3, 3)))
    with pytest.raises(ShapeError, match="conv2d"):
        ad.conv2d(x, w)


def test_non_finite_output_is_numeric_failure():
    with pytest.raises(NumericFailure):
        ad.reciprocal(Tensor([0.0, 1.0]))


def test_batchnorm_requires_batch_of_two_in_train_mode():
    x = Tensor(np.ones((1, 2, 3, 3)))
    with pytest.raises(ShapeError):
        ad.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2))


def test_batchnorm_train_eval_consistency():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 2 + 1)
    g, b = Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(3))
    train = ad.batchnorm2d(x, g, b, np.zeros(3), np.ones(3), training=True, update_stats=False)
    rm = x.data.mean(axis=(0, 2, 3))
    rv = x.data.var(axis=(0, 2, 3))
    ev = ad.batchnorm2d(x, g, b, rm, rv, training=False)
    assert np.max(np.abs(train.data - ev.data)) < 1e-10


def test_batchnorm_updates_running_stats():
    x = Tensor(np.random.default_rng(4).standard_normal((3, 2, 4, 4)))
    rm, rv = np.zeros(2), np.ones(2)
    ad.batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, momentum=0.1)
    np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3)))


def test_upsample_identity_when_same_size():
    x = Tensor(np.random.default_rng(5).standard_normal((1, 2, 4, 7)))
    np.testing.assert_allclose(ad.upsample_bilinear(x, size=(4, 7)).data, x.data)


def test_upsample_preserves_constants():
    x = Tensor(np.full((1, 1, 16, 16), 3.25))
    np.testing.assert_allclose(ad.upsample_bilinear(x, size=(33, 33)).data, 3.25)


def test_determinism():
    def run():
        rng = np.random.default_rng(11)
        loss, tensors = PRIMITIVE_CASES["conv2d"](rng)
        grads = backward(loss())
        return loss().data.copy(), [grads[t].data for t in tensors]
    a, b = run(), run()
    assert a[0].tobytes() == b[0].tobytes()
    for ga, gb in zip(a[1], b[1]):
        assert ga.tobytes() == gb.tobytes()


def test_apply_primitive_dispatch():
    out = ad.apply_primitive("relu", [Tensor([-1.0, 3.0])])
    np.testing.assert_array_equal(out.data, [0.0, 3.0])
    with pytest.raises(ValueError):
        ad.apply_primitive("softmax", [Tensor([1.0])])


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = Tensor([1.0, -2.0])
        state = AdamState(lr=0.1)
        adam_step(state, [p], {p: np.zeros(2)})
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude_is_lr(self):
        p = Tensor([0.0, 0.0])
        adam_step(AdamState(lr=0.01), [p], {p: np.array([3.0, -0.5])})
        np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)

    def test_quadratic_convergence(self):
        theta = Tensor([0.0], requires_grad=True)
        state = AdamState(lr=0.1)
        for _ in range(200):
            grads = backward(ad.sum_(ad.square(ad.sub(theta, Tensor([3.0])))))
            adam_step(state, [theta], grads)
        assert abs(theta.data[0] - 3.0) < 0.05

    def test_shape_mismatch(self):
        p = Tensor([0.0, 0.0])
        with pytest.raises(ShapeError):
            adam_step(AdamState(), [p], {p: np.zeros(3)})

    def test_weight_decay_is_coupled(self):
        p = Tensor([2.0])
        state = AdamState(lr=0.01, weight_decay=0.5)
        adam_step(state, [p], {p: np.zeros(1)})
        # gradient seen by Adam is 0.5 * 2 = 1 > 0, so the step is -lr
        np.testing.assert_allclose(p.data, [1.99], rtol=1e-6)
