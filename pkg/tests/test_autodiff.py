import numpy as np
import pytest

from evmem import autodiff as ad
from evmem.autodiff import (
    NotScalar,
    ShapeMismatch,
    Tensor,
    backward,
    clip01,
    cross_entropy,
    embedding_lookup,
    gather_rows,
    gelu,
    grad_check,
    layer_norm,
    log_softmax,
    matmul,
    mse,
    narrow,
    no_grad,
    reshape,
    softmax,
    tmean,
    transpose,
    tsum,
    xlogx,
)

OP_TOL = 1e-5  # per-op gradient check bound


def check(f, x_data, tol=OP_TOL, seed=None):
    x = Tensor(np.asarray(x_data, dtype=np.float64), requires_grad=True)
    err = grad_check(f, x)
    assert err < tol, f"grad_check failed: {err}"


class TestBasics:
    def test_sum_of_squares_gradient(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        backward(tsum(x * x))
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        s = softmax(Tensor(rng.normal(size=(7, 11)) * 3))
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_constant_loss_is_noop(self):
        backward(Tensor(3.0))  # nothing to do, must not raise

    def test_not_scalar_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(NotScalar):
            backward(x * x)

    def test_two_paths_accumulate(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        backward(x * x + x * x)  # d/dx 2x^2 = 4x
        np.testing.assert_allclose(x.grad, 12.0)

    def test_backward_linearity(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(4,))
        w = rng.normal(size=(4,))

        def losses(x):
            return tsum(x * w), tsum(x * x)

        x = Tensor(data.copy(), requires_grad=True)
        la, lb = losses(x)
        backward(la + lb)
        joint = x.grad.copy()

        x = Tensor(data.copy(), requires_grad=True)
        la, lb = losses(x)
        backward(la)
        backward(lb)
        np.testing.assert_allclose(x.grad, joint, rtol=1e-12)

    def test_leaf_as_loss(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        backward(x)
        np.testing.assert_allclose(x.grad, 1.0)

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(tsum(x.detach() * x))
        np.testing.assert_allclose(x.grad, x.data)  # only the live branch

    def test_no_grad_suppresses_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = tsum(x * x)
        assert y.node is None and not y.requires_grad

    def test_straight_through_composition(self):
        # y + stopgrad(z - y) forwards z but backpropagates into y
        y = Tensor(np.array([0.2, 0.8]), requires_grad=True)
        z = np.array([0.0, 1.0])
        out = y + Tensor(z - y.data)
        np.testing.assert_allclose(out.data, z)
        backward(tsum(out * np.array([3.0, 5.0])))
        np.testing.assert_allclose(y.grad, [3.0, 5.0])


class TestShapes:
    def test_add_rejects_non_suffix(self):
        with pytest.raises(ShapeMismatch):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))

    def test_add_rejects_inner_one_broadcast(self):
        with pytest.raises(ShapeMismatch):
            ad.add(Tensor(np.ones((4, 1, 5))), Tensor(np.ones((4, 3, 5))))

    def test_suffix_broadcast_allowed(self):
        out = Tensor(np.ones((2, 3, 4))) + Tensor(np.ones(4))
        assert out.shape == (2, 3, 4)

    def test_matmul_rejects_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_matmul_rejects_unequal_batches(self):
        with pytest.raises(ShapeMismatch):
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 4, 5))))

    def test_cross_entropy_shape_guard(self):
        with pytest.raises(ShapeMismatch):
            cross_entropy(Tensor(np.ones((2, 3))), np.array([0, 1, 2]))


class TestGradChecks:
    """Every differentiable op against central finite differences."""

    def test_add_broadcast(self):
        rng = np.random.default_rng(2)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        a = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        check(lambda t: tsum(ad.add(Tensor(a), t) * w), b.data)

    def test_mul_div(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        check(lambda t: tsum(ad.mul(t, Tensor(a)) * w), rng.normal(size=(3, 4)))
        check(lambda t: tsum(ad.div(Tensor(a), t) * w), rng.uniform(1.0, 2.0, size=(3, 4)))

    def test_matmul_2d_fd(self):
        rng = np.random.default_rng(4)
        b = rng.normal(size=(5, 3))
        w = rng.normal(size=(4, 3))
        a = rng.normal(size=(4, 5))
        # plain 2d matmul is exact enough to hold a tighter bound than the generic one
        check(lambda t: tsum(matmul(t, Tensor(b)) * w), a, tol=1e-6)
        check(lambda t: tsum(matmul(Tensor(a), t) * w), b, tol=1e-6)

    def test_matmul_batched(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(2, 4, 2))
        w = rng.normal(size=(2, 3, 2))
        check(lambda t: tsum(matmul(t, Tensor(b)) * w), a)
        check(lambda t: tsum(matmul(Tensor(a), t) * w), b)

    def test_matmul_linear_map(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(2, 3, 5))
        b = rng.normal(size=(5, 4))
        w = rng.normal(size=(2, 3, 4))
        check(lambda t: tsum(matmul(t, Tensor(b)) * w), a)
        check(lambda t: tsum(matmul(Tensor(a), t) * w), b)

    def test_reshape_transpose_narrow(self):
        rng = np.random.default_rng(7)
        w1 = rng.normal(size=(6, 2))
        check(lambda t: tsum(reshape(t, (6, 2)) * w1), rng.normal(size=(3, 4)))
        w2 = rng.normal(size=(4, 2, 3))
        check(lambda t: tsum(transpose(t, (2, 0, 1)) * w2), rng.normal(size=(2, 3, 4)))
        w3 = rng.normal(size=(2, 4))
        check(lambda t: tsum(narrow(t, 0, 1, 2) * w3), rng.normal(size=(5, 4)))

    def test_gather_accumulates_duplicates(self):
        rng = np.random.default_rng(8)
        idx = np.array([0, 2, 0, 1])
        w = rng.normal(size=(4, 3))
        check(lambda t: tsum(gather_rows(t, idx) * w), rng.normal(size=(3, 3)))

    def test_embedding_lookup(self):
        rng = np.random.default_rng(9)
        ids = np.array([[0, 1], [3, 0]])
        w = rng.normal(size=(2, 2, 4))
        check(lambda t: tsum(embedding_lookup(t, ids) * w), rng.normal(size=(5, 4)))

    def test_sum_mean_axes(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 4))
        w0 = rng.normal(size=(3, 4))
        check(lambda t: tsum(tsum(t, axis=0) * w0), x)
        w1 = rng.normal(size=(2, 4))
        check(lambda t: tsum(tmean(t, axis=1) * w1), x)
        w2 = rng.normal(size=(2, 3, 1))
        check(lambda t: tsum(tmean(t, axis=(0, 2)) * np.float64(1.3)), x)
        check(lambda t: tsum(tsum(t, axis=2, keepdims=True) * w2), x)

    def test_softmax_log_softmax(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 5)) * 2
        w = rng.normal(size=(3, 5))
        check(lambda t: tsum(softmax(t) * w), x)
        check(lambda t: tsum(log_softmax(t) * w), x)

    def test_layer_norm_all_inputs(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 3, 6))
        g = rng.normal(size=(6,))
        b = rng.normal(size=(6,))
        w = rng.normal(size=(2, 3, 6))

        def wrt_x(t):
            return tsum(layer_norm(t, Tensor(g), Tensor(b)) * w)

        def wrt_g(t):
            return tsum(layer_norm(Tensor(x), t, Tensor(b)) * w)

        def wrt_b(t):
            return tsum(layer_norm(Tensor(x), Tensor(g), t) * w)

        check(wrt_x, x)
        check(wrt_g, g)
        check(wrt_b, b)

    def test_gelu_including_zero(self):
        rng = np.random.default_rng(13)
        x = np.concatenate([[0.0], rng.normal(size=7)])
        w = rng.normal(size=8)
        check(lambda t: tsum(gelu(t) * w), x)

    def test_exp_log_pow(self):
        rng = np.random.default_rng(14)
        w = rng.normal(size=5)
        check(lambda t: tsum(ad.exp(t) * w), rng.normal(size=5))
        check(lambda t: tsum(ad.log(t) * w), rng.uniform(0.5, 2.0, size=5))
        check(lambda t: tsum((t**3.0) * w), rng.uniform(0.5, 2.0, size=5))

    def test_xlogx(self):
        rng = np.random.default_rng(15)
        w = rng.normal(size=5)
        check(lambda t: tsum(xlogx(t) * w), rng.uniform(0.2, 1.0, size=5))
        # the 0 ln 0 = 0 convention, forward and backward
        z = Tensor(np.array([0.0, 0.5]), requires_grad=True)
        out = xlogx(z)
        np.testing.assert_allclose(out.data[0], 0.0)
        backward(tsum(out))
        assert z.grad[0] == 0.0

    def test_clip01_interior_and_boundary(self):
        rng = np.random.default_rng(16)
        w = rng.normal(size=6)
        check(lambda t: tsum(clip01(t) * w), rng.uniform(0.1, 0.9, size=6))
        x = Tensor(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]), requires_grad=True)
        backward(tsum(clip01(x)))
        # gradient passes on the closed interval, blocked strictly outside
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_mse(self):
        rng = np.random.default_rng(17)
        target = rng.normal(size=(3, 4))
        check(lambda t: mse(t, Tensor(target)), rng.normal(size=(3, 4)))

    def test_cross_entropy(self):
        rng = np.random.default_rng(18)
        labels = np.array([0, 2, 1, 2])
        check(lambda t: cross_entropy(t, labels), rng.normal(size=(4, 3)))

    def test_cross_entropy_uniform_logits_value(self):
        logits = Tensor(np.zeros((5, 128)))
        loss = cross_entropy(logits, np.zeros(5, dtype=np.int64))
        np.testing.assert_allclose(loss.data, np.log(128.0), atol=1e-12)


class TestComposedGraph:
    def test_small_mlp_end_to_end(self):
        rng = np.random.default_rng(19)
        w1 = rng.normal(size=(6, 8)) * 0.5
        b1 = rng.normal(size=(8,)) * 0.1
        w2 = rng.normal(size=(8, 3)) * 0.5
        g = np.abs(rng.normal(size=(6,))) + 0.5
        b = rng.normal(size=(6,)) * 0.1
        labels = np.array([0, 2, 1, 1])

        def f(t):
            h = layer_norm(t, Tensor(g), Tensor(b))
            h = gelu(matmul(h, Tensor(w1)) + Tensor(b1))
            return cross_entropy(matmul(h, Tensor(w2)), labels)

        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        assert grad_check(f, x) < 1e-4

    def test_parameters_of_composed_graph(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(4, 6))
        w2 = rng.normal(size=(8, 3)) * 0.5
        labels = np.array([0, 2, 1, 1])

        def f(t):
            h = gelu(matmul(Tensor(x), reshape(t, (6, 8))))
            return cross_entropy(matmul(h, Tensor(w2)), labels)

        w1 = Tensor(rng.normal(size=(48,)) * 0.5, requires_grad=True)
        assert grad_check(f, w1) < 1e-4
