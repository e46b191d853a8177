"""Kernel-level tests: forward oracles, hand-derived gradients vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erpcoder import nn
from oracles import adam_first_step_naive, conv1d_naive, convtranspose1d_naive, maxpool1d_naive


def _loss_closure(forward, backward, extract):
    """Build fn(x) -> (loss, grad) suitable for finite_difference_check."""

    def fn(x):
        y, ctx = forward(x)
        loss, gl = nn.mse_loss(y, np.zeros_like(y))
        lg = backward(ctx, gl)
        return loss, extract(lg)

    return fn


class TestConv1d:
    def test_hand_example(self):
        # direct-summation oracle gives [-2, -2] for this edge-detector kernel
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        w = np.array([[[1.0, 0.0, -1.0]]])
        b = np.zeros(1)
        expected = conv1d_naive(x, w, b)
        assert expected.tolist() == [[-2.0, -2.0]]
        y, _ = nn.conv1d_forward(x, w, b, stride=1, padding=0)
        np.testing.assert_array_equal(y, expected)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 11))
        w = np.eye(3)[:, :, None]  # K=1 identity
        y, _ = nn.conv1d_forward(x, w, np.zeros(3))
        np.testing.assert_array_equal(y, x)

    def test_zero_input_gives_bias(self, rng):
        w = rng.normal(size=(4, 2, 3))
        b = rng.normal(size=4)
        y, _ = nn.conv1d_forward(np.zeros((2, 9)), w, b, padding=1)
        np.testing.assert_allclose(y, np.broadcast_to(b[:, None], y.shape))

    def test_matches_naive_on_random_geometry(self, rng):
        for _ in range(20):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            t = int(rng.integers(4, 12))
            k = int(rng.integers(1, min(t, 5) + 1))
            stride = int(rng.integers(1, 4))
            pad = int(rng.integers(0, 3))
            x = rng.normal(size=(c_in, t))
            w = rng.normal(size=(c_out, c_in, k))
            b = rng.normal(size=c_out)
            y, _ = nn.conv1d_forward(x, w, b, stride=stride, padding=pad)
            np.testing.assert_allclose(y, conv1d_naive(x, w, b, stride, pad), atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match=r"channels.*\(2, 7\).*\(1, 3, 2\)"):
            nn.conv1d_forward(np.zeros((2, 7)), np.zeros((1, 3, 2)), np.zeros(1))

    def test_kernel_longer_than_input_rejected(self):
        with pytest.raises(ValueError, match="kernel length"):
            nn.conv1d_forward(np.zeros((1, 3)), np.zeros((1, 1, 5)), np.zeros(1))

    def test_backward_identity_kernel_passes_grad(self, rng):
        x = rng.normal(size=(2, 6))
        w = np.eye(2)[:, :, None]
        _, ctx = nn.conv1d_forward(x, w, np.zeros(2))
        g = rng.normal(size=(2, 6))
        lg = nn.conv1d_backward(ctx, g)
        np.testing.assert_array_equal(lg.input_grad, g)

    def test_backward_scalar_kernel_grad(self):
        # T = K = 1: dL/dW = input * upstream, by hand differentiation
        x = np.array([[3.0]])
        w = np.array([[[2.0]]])
        _, ctx = nn.conv1d_forward(x, w, np.zeros(1))
        lg = nn.conv1d_backward(ctx, np.array([[5.0]]))
        assert lg.param_grads["kernels"].item() == 15.0
        assert lg.input_grad.item() == 10.0

    def test_backward_shape_mismatch_rejected(self, rng):
        x = rng.normal(size=(1, 8))
        _, ctx = nn.conv1d_forward(x, rng.normal(size=(2, 1, 3)), np.zeros(2))
        with pytest.raises(ValueError, match="upstream grad shape"):
            nn.conv1d_backward(ctx, np.zeros((2, 99)))

    def test_gradients_match_finite_differences(self, rng):
        x0 = rng.normal(size=(3, 8))
        w0 = rng.normal(size=(2, 3, 3))
        b0 = rng.normal(size=2)
        target = rng.normal(size=(2, 4))

        def fwd_loss(x, w, b):
            y, ctx = nn.conv1d_forward(x, w, b, stride=2, padding=1)
            loss, gl = nn.mse_loss(y, target)
            return loss, nn.conv1d_backward(ctx, gl)

        err_x = nn.finite_difference_check(
            lambda x: (lambda r: (r[0], r[1].input_grad))(fwd_loss(x, w0, b0)), x0)
        err_w = nn.finite_difference_check(
            lambda w: (lambda r: (r[0], r[1].param_grads["kernels"]))(fwd_loss(x0, w, b0)), w0)
        err_b = nn.finite_difference_check(
            lambda b: (lambda r: (r[0], r[1].param_grads["bias"]))(fwd_loss(x0, w0, b)), b0)
        assert err_x < 1e-5
        assert err_w < 1e-5
        assert err_b < 1e-5


class TestMaxPool1d:
    def test_hand_example(self):
        y, ctx = nn.maxpool1d_forward(np.array([[3.0, 1.0, 4.0, 1.0]]), window=2, stride=2)
        assert y.tolist() == [[3.0, 4.0]]
        assert ctx.indices[0].tolist() == [[0, 2]]

    def test_ties_break_low(self):
        y, ctx = nn.maxpool1d_forward(np.full((2, 6), 7.0), window=3, stride=3)
        np.testing.assert_array_equal(y, np.full((2, 2), 7.0))
        np.testing.assert_array_equal(ctx.indices[0], [[0, 3], [0, 3]])

    def test_matches_naive(self, rng):
        for _ in range(10):
            t = int(rng.integers(3, 12))
            w = int(rng.integers(1, t + 1))
            s = int(rng.integers(1, 4))
            x = rng.normal(size=(2, t))
            y, ctx = nn.maxpool1d_forward(x, w, s)
            ye, ie = maxpool1d_naive(x, w, s)
            np.testing.assert_array_equal(y, ye)
            np.testing.assert_array_equal(ctx.indices[0], ie)

    def test_window_too_large_rejected(self):
        with pytest.raises(ValueError, match="window 5 exceeds"):
            nn.maxpool1d_forward(np.zeros((1, 4)), window=5, stride=1)

    def test_backward_routes_to_argmax(self, rng):
        # distinct values keep the max unique, so finite differences apply
        x0 = rng.permutation(12).astype(float).reshape(2, 6) + rng.normal(scale=0.01, size=(2, 6))
        fn = _loss_closure(
            lambda x: nn.maxpool1d_forward(x, 3, 2),
            nn.maxpool1d_backward,
            lambda lg: lg.input_grad,
        )
        assert nn.finite_difference_check(fn, x0) < 1e-6

    def test_backward_accumulates_overlaps(self):
        x = np.array([[0.0, 5.0, 1.0]])
        _, ctx = nn.maxpool1d_forward(x, window=2, stride=1)
        lg = nn.maxpool1d_backward(ctx, np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(lg.input_grad, [[0.0, 2.0, 0.0]])


class TestConvTranspose1d:
    def test_single_point_placement(self):
        # placing one unit spreads the kernel verbatim
        x = np.array([[1.0]])
        w = np.array([[[1.0, 2.0, 3.0]]])
        expected = convtranspose1d_naive(x, w, np.zeros(1))
        assert expected.tolist() == [[1.0, 2.0, 3.0]]
        y, _ = nn.convtranspose1d_forward(x, w, np.zeros(1))
        np.testing.assert_array_equal(y, expected)

    def test_zero_input_gives_bias(self, rng):
        w = rng.normal(size=(3, 2, 4))
        b = rng.normal(size=2)
        y, _ = nn.convtranspose1d_forward(np.zeros((3, 5)), w, b, stride=2, padding=1)
        np.testing.assert_allclose(y, np.broadcast_to(b[:, None], y.shape))

    def test_matches_naive_on_random_geometry(self, rng):
        for _ in range(20):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            t = int(rng.integers(1, 9))
            k = int(rng.integers(1, 6))
            stride = int(rng.integers(1, 4))
            pad = int(rng.integers(0, (k + (t - 1) * stride) // 2 + 1))
            x = rng.normal(size=(c_in, t))
            w = rng.normal(size=(c_in, c_out, k))
            b = rng.normal(size=c_out)
            if (t - 1) * stride + k - 2 * pad < 1:
                continue
            y, _ = nn.convtranspose1d_forward(x, w, b, stride=stride, padding=pad)
            np.testing.assert_allclose(y, convtranspose1d_naive(x, w, b, stride, pad), atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        c_in=st.integers(1, 3),
        c_out=st.integers(1, 3),
        t_out=st.integers(1, 7),
        k=st.integers(1, 5),
        stride=st.integers(1, 3),
        pad=st.integers(0, 2),
        seed=st.integers(0, 2**31),
    )
    def test_adjoint_identity(self, c_in, c_out, t_out, k, stride, pad, seed):
        # <conv(x; W), y> == <x, convT(y; W)> whenever the geometry round-trips
        t = (t_out - 1) * stride + k - 2 * pad
        if t < k - 2 * pad or t < 1 or k > t + 2 * pad:
            return
        r = np.random.default_rng(seed)
        x = r.normal(size=(c_in, t))
        w = r.normal(size=(c_out, c_in, k))
        y = r.normal(size=(c_out, t_out))
        cx, _ = nn.conv1d_forward(x, w, np.zeros(c_out), stride=stride, padding=pad)
        assert cx.shape == y.shape
        ty, _ = nn.convtranspose1d_forward(y, w, np.zeros(c_in), stride=stride, padding=pad)
        lhs = float((cx * y).sum())
        rhs = float((x * ty).sum())
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) / scale < 1e-10

    def test_gradients_match_finite_differences(self, rng):
        x0 = rng.normal(size=(3, 5))
        w0 = rng.normal(size=(3, 2, 4))
        b0 = rng.normal(size=2)
        target = rng.normal(size=(2, 10))

        def fwd_loss(x, w, b):
            y, ctx = nn.convtranspose1d_forward(x, w, b, stride=2, padding=1)
            loss, gl = nn.mse_loss(y, target)
            return loss, nn.convtranspose1d_backward(ctx, gl)

        assert nn.finite_difference_check(
            lambda x: (lambda r: (r[0], r[1].input_grad))(fwd_loss(x, w0, b0)), x0) < 1e-5
        assert nn.finite_difference_check(
            lambda w: (lambda r: (r[0], r[1].param_grads["kernels"]))(fwd_loss(x0, w, b0)), w0) < 1e-5
        assert nn.finite_difference_check(
            lambda b: (lambda r: (r[0], r[1].param_grads["bias"]))(fwd_loss(x0, w0, b)), b0) < 1e-5


class TestDenseTanh:
    def test_identity_weight(self, rng):
        x = rng.normal(size=5)
        y, _ = nn.dense_forward(x, np.eye(5), np.zeros(5))
        np.testing.assert_array_equal(y, x)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="input width 4.*weight input"):
            nn.dense_forward(np.zeros(4), np.zeros((2, 3)), np.zeros(2))

    def test_tanh_analytic_values(self):
        y, ctx = nn.tanh_forward(np.array([0.0]))
        assert y[0] == 0.0
        lg = nn.tanh_backward(ctx, np.array([1.0]))
        assert lg.input_grad[0] == 1.0

    def test_gradients_match_finite_differences(self, rng):
        x0 = rng.normal(size=(4, 6)) * 0.5
        w0 = rng.normal(size=(3, 6))
        b0 = rng.normal(size=3)
        target = rng.normal(size=(4, 3))

        def fwd_loss(x, w, b):
            h, dctx = nn.dense_forward(x, w, b)
            y, tctx = nn.tanh_forward(h)
            loss, gl = nn.mse_loss(y, target)
            gh = nn.tanh_backward(tctx, gl).input_grad
            return loss, nn.dense_backward(dctx, gh)

        assert nn.finite_difference_check(
            lambda x: (lambda r: (r[0], r[1].input_grad))(fwd_loss(x, w0, b0)), x0) < 1e-6
        assert nn.finite_difference_check(
            lambda w: (lambda r: (r[0], r[1].param_grads["weight"]))(fwd_loss(x0, w, b0)), w0) < 1e-6
        assert nn.finite_difference_check(
            lambda b: (lambda r: (r[0], r[1].param_grads["bias"]))(fwd_loss(x0, w0, b)), b0) < 1e-6


class TestMseLoss:
    def test_equal_inputs_zero(self, rng):
        x = rng.normal(size=(3, 4))
        loss, grad = nn.mse_loss(x, x.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(x))

    def test_unit_difference(self):
        loss, _ = nn.mse_loss(np.ones((2, 5)), np.zeros((2, 5)))
        assert loss == 1.0

    def test_hand_value(self):
        # (0 + 4) / 2
        loss, grad = nn.mse_loss(np.array([0.0, 2.0]), np.array([0.0, 0.0]))
        assert loss == 2.0
        np.testing.assert_array_equal(grad, [0.0, 2.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="pred shape"):
            nn.mse_loss(np.zeros(3), np.zeros(4))


class TestAdam:
    def test_first_step_closed_form(self):
        params = {"w": np.array([1.0])}
        state = nn.adam_init(params, lr=0.001)
        nn.adam_step(params, {"w": np.array([1.0])}, state)
        expected = adam_first_step_naive(1.0, 1.0, lr=0.001)
        assert abs(params["w"][0] - expected) < 1e-15
        assert abs((1.0 - params["w"][0]) - 0.001) < 1e-8

    def test_zero_grad_is_noop(self):
        params = {"w": np.array([2.0, -3.0])}
        state = nn.adam_init(params)
        nn.adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [2.0, -3.0])
        assert state.step_count == 1

    def test_deterministic(self, rng):
        g = rng.normal(size=(3, 2))
        runs = []
        for _ in range(2):
            params = {"w": np.ones((3, 2))}
            state = nn.adam_init(params, lr=0.01)
            for _ in range(5):
                nn.adam_step(params, {"w": g}, state, weight_decay=1e-3)
            runs.append(params["w"].copy())
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_weight_decay_shrinks(self):
        params = {"w": np.array([10.0])}
        state = nn.adam_init(params)
        nn.adam_step(params, {"w": np.zeros(1)}, state, weight_decay=0.1)
        assert params["w"][0] < 10.0


class TestFiniteDifferenceCheck:
    def test_linear_map_near_exact(self, rng):
        a = rng.normal(size=(4, 4))

        def fn(x):
            loss = float(a.ravel() @ x.ravel())
            return loss, a.copy()

        assert nn.finite_difference_check(fn, rng.normal(size=(4, 4))) < 1e-9

    def test_conv_stack(self, rng):
        w1 = rng.normal(size=(4, 2, 3))
        w2 = rng.normal(size=(4, 2, 5))
        target = rng.normal(size=(2, 9))

        def fn(x):
            h1, c1 = nn.conv1d_forward(x, w1, np.zeros(4), padding=1)
            h2, c2 = nn.maxpool1d_forward(h1, 2, 2)
            h3, c3 = nn.tanh_forward(h2)
            y, c4 = nn.convtranspose1d_forward(h3, w2, np.zeros(2), stride=2, padding=1)
            loss, gl = nn.mse_loss(y, target)
            g = nn.convtranspose1d_backward(c4, gl).input_grad
            g = nn.tanh_backward(c3, g).input_grad
            g = nn.maxpool1d_backward(c2, g).input_grad
            g = nn.conv1d_backward(c1, g).input_grad
            return loss, g

        assert nn.finite_difference_check(fn, rng.normal(size=(2, 8))) < 1e-4

    def test_detects_wrong_gradient(self, rng):
        a = rng.normal(size=6)

        def fn(x):
            return float(a @ x), 2.0 * a  # deliberately doubled

        assert abs(nn.finite_difference_check(fn, rng.normal(size=6)) - 1.0) < 1e-6


class TestShapeAlgebra:
    @settings(max_examples=80, deadline=None)
    @given(
        t=st.integers(2, 64),
        k=st.integers(1, 9),
        stride=st.integers(1, 4),
        pad=st.integers(0, 4),
    )
    def test_mirrored_geometry_restores_length(self, t, k, stride, pad):
        if k > t + 2 * pad or (t + 2 * pad - k) % stride != 0:
            return
        t_out = nn.conv_output_length(t, k, stride, pad)
        assert nn.convtranspose_output_length(t_out, k, stride, pad) == t

    def test_determinism(self, rng):
        x = rng.normal(size=(2, 3, 16))
        w = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=4)
        y1, _ = nn.conv1d_forward(x, w, b, stride=2, padding=2)
        y2, _ = nn.conv1d_forward(x.copy(), w.copy(), b.copy(), stride=2, padding=2)
        np.testing.assert_array_equal(y1, y2)
