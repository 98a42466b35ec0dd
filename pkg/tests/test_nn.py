import numpy as np
import pytest

from compcnn.gradcheck import finite_diff_check
from compcnn.nn import (Backbone, NonFiniteGradientError, Param, ShapeError, as_tensor,
                        conv3x3_backward, conv3x3_forward, dense_forward, relu_forward, sgd_step)


def loop_conv(x, k, b):
    """Six nested loops; the reference for conv3x3_forward."""
    c_out, c_in = k.shape[:2]
    h, w = x.shape[1] - 2, x.shape[2] - 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for r in range(h):
            for c in range(w):
                acc = b[o]
                for ci in range(c_in):
                    for i in range(3):
                        for j in range(3):
                            acc += k[o, ci, i, j] * x[ci, r + i, c + j]
                out[o, r, c] = acc
    return out


def tiny_backbone(seed=0, shape=(1, 6, 6), emb=4):
    return Backbone(shape, 2, (5, 4), emb, seed=seed)


def test_tensor_rejects_non_finite():
    with pytest.raises(ValueError):
        as_tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Param(np.array([np.inf]))


class TestConv:
    def test_ones_kernel_sums_nine(self):
        out = conv3x3_forward(np.ones((1, 5, 5)), Param(np.ones((1, 1, 3, 3))), Param(np.zeros(1)))
        np.testing.assert_array_equal(out, np.full((1, 3, 3), 9.0))

    def test_zero_kernel_gives_bias(self):
        x = np.random.default_rng(0).normal(size=(2, 6, 7))
        out = conv3x3_forward(x, Param(np.zeros((3, 2, 3, 3))), Param(np.array([1.5, -2.0, 0.0])))
        assert out.shape == (3, 4, 5)
        for o, b in enumerate([1.5, -2.0, 0.0]):
            np.testing.assert_array_equal(out[o], b)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (1, 5, 5))
        k, b = rng.uniform(-1, 1, (2, 1, 3, 3)), rng.uniform(-1, 1, 2)
        np.testing.assert_allclose(conv3x3_forward(x, Param(k), Param(b)), loop_conv(x, k, b),
                                   rtol=0, atol=1e-14)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (3, 2, 6, 6))
        k, b = Param(rng.uniform(-1, 1, (4, 2, 3, 3))), Param(rng.uniform(-1, 1, 4))
        batched = conv3x3_forward(x, k, b)
        for n in range(3):
            np.testing.assert_allclose(batched[n], conv3x3_forward(x[n], k, b), atol=1e-14)

    @pytest.mark.parametrize("x_shape,k_shape", [((1, 2, 5), (1, 1, 3, 3)),
                                                 ((2, 5, 5), (1, 1, 3, 3)),
                                                 ((1, 5, 5), (1, 1, 2, 2))])
    def test_shape_errors(self, x_shape, k_shape):
        with pytest.raises(ShapeError):
            conv3x3_forward(np.zeros(x_shape), Param(np.zeros(k_shape)), Param(np.zeros(k_shape[0])))


class TestDense:
    def test_identity(self):
        x = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(dense_forward(x, Param(np.eye(3)), Param(np.zeros(3))), x)

    def test_zero_weight(self):
        out = dense_forward(np.array([3.0, 4.0]), Param(np.zeros((2, 2))), Param(np.array([1.0, 2.0])))
        np.testing.assert_array_equal(out, [1.0, 2.0])

    def test_hand_product(self):
        out = dense_forward(np.ones(2), Param(np.array([[1.0, 2.0], [3.0, 4.0]])), Param(np.zeros(2)))
        np.testing.assert_array_equal(out, [3.0, 7.0])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            dense_forward(np.ones(3), Param(np.ones((2, 2))), Param(np.zeros(2)))


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(relu_forward(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_negative_and_nonnegative(self):
        rng = np.random.default_rng(3)
        neg = -rng.uniform(0.1, 5, 20)
        pos = rng.uniform(0, 5, 20)
        np.testing.assert_array_equal(relu_forward(neg), 0.0)
        np.testing.assert_array_equal(relu_forward(pos), pos)


class TestBackboneForward:
    def test_zero_network(self):
        bb = tiny_backbone()
        for p in bb.params():
            p.value[...] = 0.0
        emb, _ = bb.forward(np.random.default_rng(0).normal(size=(1, 6, 6)))
        np.testing.assert_array_equal(emb, np.zeros(4))

    def test_deterministic(self):
        bb = tiny_backbone(5)
        x = np.random.default_rng(4).uniform(size=(1, 6, 6))
        a, _ = bb.forward(x)
        b, _ = bb.forward(x.copy())
        assert a.tobytes() == b.tobytes()

    def test_same_seed_same_weights(self):
        a, b = tiny_backbone(9), tiny_backbone(9)
        for p, q in zip(a.params(), b.params()):
            assert p.value.tobytes() == q.value.tobytes()

    def test_init_bounds(self):
        bb = Backbone((1, 8, 8), 3, (10, 6), 5, seed=1)
        for p, fan_in in zip(bb.params(), [9, 9, 108, 108, 10, 10, 6, 6]):
            assert np.all(np.abs(p.value) <= 1 / np.sqrt(fan_in))

    def test_compositional_oracle(self):
        bb = tiny_backbone(11)
        x = np.random.default_rng(5).uniform(-1, 1, (1, 6, 6))
        h = relu_forward(conv3x3_forward(x, bb.conv_w, bb.conv_b)).ravel()
        h = relu_forward(dense_forward(h, bb.dense1_w, bb.dense1_b))
        h = relu_forward(dense_forward(h, bb.dense2_w, bb.dense2_b))
        expected = dense_forward(h, bb.dense3_w, bb.dense3_b)
        emb, trace = bb.forward(x)
        np.testing.assert_array_equal(emb, expected)
        assert emb.shape == (4,)
        # replaying the trace's input reproduces its activations
        _, again = bb.forward(trace.x[0])
        np.testing.assert_array_equal(again.h2, trace.h2)

    def test_batch_shapes(self):
        bb = tiny_backbone()
        emb, trace = bb.forward(np.zeros((7, 1, 6, 6)))
        assert emb.shape == (7, 4)
        assert trace.conv_pre.shape == (7, 2, 4, 4)
        assert bb.backward(trace, np.ones((7, 4))).shape == (7, 1, 6, 6)

    def test_wrong_input_shape(self):
        with pytest.raises(ShapeError):
            tiny_backbone().forward(np.zeros((1, 5, 6)))


class TestBackboneBackward:
    def test_zero_upstream(self):
        bb = tiny_backbone(2)
        _, trace = bb.forward(np.random.default_rng(0).uniform(size=(1, 6, 6)))
        dx = bb.backward(trace, np.zeros(4))
        for p in bb.params():
            assert not p.grad.any()
        assert not dx.any()

    def test_linear_regime_matches_composed_map(self):
        # all weights, biases and inputs positive => every ReLU is active and
        # the network is affine in x
        rng = np.random.default_rng(6)
        bb = tiny_backbone()
        for p in bb.params():
            p.value[...] = rng.uniform(0.05, 0.5, p.shape)
        x = rng.uniform(0.1, 1.0, (1, 6, 6))

        conv = np.zeros((2 * 4 * 4, 36))
        k = bb.conv_w.value
        for o in range(2):
            for r in range(4):
                for c in range(4):
                    for i in range(3):
                        for j in range(3):
                            conv[o * 16 + r * 4 + c, (r + i) * 6 + (c + j)] += k[o, 0, i, j]
        linear = bb.dense3_w.value @ bb.dense2_w.value @ bb.dense1_w.value @ conv

        _, trace = bb.forward(x)
        assert (trace.conv_pre > 0).all() and (trace.h1_pre > 0).all() and (trace.h2_pre > 0).all()
        dx = bb.backward(trace, np.eye(4)[0])
        np.testing.assert_allclose(dx.ravel(), linear[0], rtol=1e-12)

    def test_shape_mismatch(self):
        bb = tiny_backbone()
        _, trace = bb.forward(np.zeros((1, 6, 6)))
        with pytest.raises(ShapeError):
            bb.backward(trace, np.zeros(5))

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        bb = tiny_backbone(seed)
        x = rng.uniform(-1, 1, (2, 1, 6, 6))
        r = rng.uniform(-1, 1, (2, 4))

        def loss():
            emb, trace = bb.forward(x)
            bb.backward(trace, r)
            return float(np.sum(emb * r))
        report = finite_diff_check(loss, bb.params(), step=1e-5, tol=1e-4)
        assert report.passed, str(report)

    def test_conv_input_gradient_shape_guard(self):
        k, b = Param(np.zeros((2, 1, 3, 3))), Param(np.zeros(2))
        with pytest.raises(ShapeError):
            conv3x3_backward(np.zeros((1, 5, 5)), k, b, np.zeros((2, 2, 2)))


class TestSGD:
    def test_zero_grad_no_change(self):
        p = Param(np.array([1.0, -2.0]))
        sgd_step([p], 0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_definition(self):
        p = Param(np.array([1.0]))
        p.grad[:] = 2.0
        sgd_step([p], 0.1)
        assert p.value[0] == pytest.approx(0.8, abs=1e-15)
        assert p.grad[0] == 0.0

    def test_two_steps_linear(self):
        p = Param(np.array([1.0]))
        for _ in range(2):
            p.grad[:] = 3.0
            sgd_step([p], 0.01)
        assert p.value[0] == pytest.approx(1.0 - 2 * 0.01 * 3.0, abs=1e-15)

    def test_non_finite_aborts(self):
        p = Param(np.array([1.0]), name="w")
        p.grad[:] = np.nan
        with pytest.raises(NonFiniteGradientError, match="w"):
            sgd_step([p], 0.1)
        assert p.value[0] == 1.0

    def test_bad_learning_rate(self):
        with pytest.raises(ValueError):
            sgd_step([Param(np.zeros(1))], 0.0)


class TestFiniteDiffCheck:
    def test_quadratic(self):
        theta = Param(np.random.default_rng(0).normal(size=5), name="theta")

        def loss():
            theta.grad += theta.value
            return 0.5 * float(theta.value @ theta.value)
        report = finite_diff_check(loss, [theta])
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_corrupted_gradient_fails(self):
        theta = Param(np.array([0.3, -1.2, 2.0]), name="theta")

        def loss():
            theta.grad += 2 * theta.value  # wrong by a factor of two
            return 0.5 * float(theta.value @ theta.value)
        report = finite_diff_check(loss, [theta])
        assert not report.passed
        assert [c.name for c in report.failures()] == ["theta"]

    def test_grads_cleared_afterwards(self):
        theta = Param(np.ones(2))

        def loss():
            theta.grad += theta.value
            return 0.5 * float(theta.value @ theta.value)
        finite_diff_check(loss, [theta])
        assert not theta.grad.any()


def test_training_determinism():
    def run():
        bb = tiny_backbone(3)
        x = np.random.default_rng(8).uniform(size=(4, 1, 6, 6))
        for _ in range(5):
            emb, trace = bb.forward(x)
            bb.backward(trace, emb)
            sgd_step(bb.params(), 0.01)
        return b"".join(p.value.tobytes() for p in bb.params())
    assert run() == run()
