import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magloc.errors import CheckpointError, ContractError, ShapeError
from magloc.magnet import MagNetConfig, build, forward, loss_and_grads
from magloc.numkit import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    conv1d,
    count_params,
    kernels,
    mae_metric,
    read_checkpoint,
    write_checkpoint,
)
from magloc.numkit.checkpoint import decode_checkpoint, encode_checkpoint


def naive_conv(x, w, b, d):
    """Direct nested-loop dilated convolution with symmetric zero padding."""
    c_in, length = x.shape
    c_out, _, k = w.shape
    total = d * (k - 1)
    left = total // 2
    padded = np.zeros((c_in, length + total), dtype=x.dtype)
    padded[:, left : left + length] = x
    out = np.empty((c_out, length), dtype=x.dtype)
    for c in range(c_out):
        for t in range(length):
            acc = b[c]
            for i in range(c_in):
                for j in range(k):
                    acc = acc + w[c, i, j] * padded[i, t + j * d]
            out[c, t] = acc
    return out


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b)))


class TestConv1d:
    def test_identity_kernel(self):
        x = np.array([[1.0, 2, 3, 4, 5]])
        out = conv1d(x, np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_small_dilated_example(self):
        x = np.array([[1.0, 0, 0, 1]])
        w = np.ones((1, 1, 3))
        out = conv1d(x, w, np.zeros(1), dilation=2)
        np.testing.assert_array_equal(out, naive_conv(x, w, np.zeros(1), 2))
        # padding of 2 on each side: taps at t-2, t, t+2
        np.testing.assert_array_equal(out, [[1, 1, 1, 1]])

    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(0)
        out = conv1d(np.zeros((2, 7)), rng.normal(size=(3, 2, 4)), np.array([0.5, -1.0, 2.0]), dilation=3)
        np.testing.assert_array_equal(out, np.repeat([[0.5], [-1.0], [2.0]], 7, axis=1))

    @pytest.mark.parametrize("k,d,c,length", list(itertools.product((1, 3, 5, 20), (1, 2, 64), (1, 2, 3), (1, 5, 200))))
    def test_matches_naive_oracle_exactly(self, k, d, c, length):
        # small integers keep every partial sum exact, so summation order cannot matter
        rng = np.random.default_rng(k * 1000 + d * 10 + c + length)
        x = rng.integers(-8, 9, size=(c, length)).astype(np.float64)
        w = rng.integers(-4, 5, size=(2, c, k)).astype(np.float64)
        b = rng.integers(-3, 4, size=2).astype(np.float64)
        np.testing.assert_array_equal(conv1d(x, w, b, d), naive_conv(x, w, b, d))

    def test_output_length_is_input_length(self):
        out = conv1d(np.ones((3, 200)), np.ones((4, 3, 20)), np.zeros(4), dilation=64)
        assert out.shape == (4, 200)

    def test_batched_layout_matches_single(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 30))  # (C, N, L)
        w, b = rng.normal(size=(3, 2, 5)), rng.normal(size=3)
        out = conv1d(x, w, b, dilation=2)
        for n in range(5):
            np.testing.assert_allclose(out[:, n], conv1d(x[:, n], w, b, dilation=2), atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv1d(np.ones((2, 10)), np.ones((4, 3, 3)), np.zeros(4))

    def test_causal_padding_uses_only_past(self):
        x = np.zeros((1, 10))
        x[0, 5] = 1.0
        out = conv1d(x, np.ones((1, 1, 3)), np.zeros(1), padding="causal")
        assert np.all(out[0, :5] == 0)
        np.testing.assert_array_equal(out[0, 5:8], 1.0)


class TestForwardOps:
    def test_relu(self):
        np.testing.assert_array_equal(kernels.relu_forward(np.array([-2.0, 0, 3])), [0, 0, 3])

    def test_global_avg_pool_constant_rows(self):
        x = np.array([[2.0] * 4, [-7.0] * 4])
        np.testing.assert_array_equal(kernels.global_avg_pool_forward(x), [2.0, -7.0])

    def test_dense_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(kernels.dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_dense_shape_error(self):
        with pytest.raises(ShapeError):
            kernels.dense_forward(np.ones(3), np.ones((2, 4)), np.zeros(2))

    def test_mse_shape_error(self):
        with pytest.raises(ShapeError):
            kernels.mse_forward(np.ones(3), np.ones(4))

    def test_mae_metric_three_four_five(self):
        pred = np.zeros((2, 6))
        truth = pred + np.array([[3.0], [4.0]])
        assert mae_metric(pred, truth) == pytest.approx(5.0)


def finite_difference(f, arr, h=1e-4):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relu_margin(model, x):
    """Smallest |pre-activation| over every ReLU in the micro model."""
    h = np.ascontiguousarray(x.transpose(1, 0, 2))
    margin = np.inf
    for (w, b), d in zip(model.conv, model.config.dilations):
        z = conv1d(h, w.data, b.data, d)
        margin = min(margin, np.min(np.abs(z)))
        h = kernels.relu_forward(z)
    z = kernels.dense_forward(kernels.global_avg_pool_forward(h), model.head[0][0].data, model.head[0][1].data)
    return min(margin, np.min(np.abs(z)))


class TestBackward:
    def test_hand_derivative(self):
        tape = Tape()
        w = Tensor(np.array([[3.0]]), requires_grad=True)
        x = Tensor(np.array([2.0]))
        pred = tape.dense(x, w, Tensor(np.zeros(1)))
        loss = tape.mse_loss(pred, Tensor(np.zeros(1)))
        (gw,) = backward(tape, loss, [w])
        assert gw[0, 0] == pytest.approx(24.0)

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            backward(tape, tape.relu(x))

    def test_zero_upstream_gradient(self):
        # target equal to prediction makes dL/dpred zero everywhere
        rng = np.random.default_rng(1)
        model = build(MagNetConfig(kernels=(3, 3), dilations=(1, 2), channels=(4, 4)), seed=1, dtype=np.float64, validate=False)
        x = rng.normal(size=(2, 3, 16))
        y = forward(model, x)
        _, grads = loss_and_grads(model, x, y)
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_ops_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        c_in, c_out, n, length = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 3), rng.integers(3, 12)
        k, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        while True:
            # central differences are meaningless across a ReLU kink
            x = rng.normal(size=(c_in, n, length))
            w = rng.normal(size=(c_out, c_in, k))
            b = rng.normal(size=c_out)
            if np.min(np.abs(conv1d(x, w, b, d))) > 1e-3:
                break
        w2 = rng.normal(size=(2, c_out))
        b2 = rng.normal(size=2)
        target = rng.normal(size=(2, n))
        tx, tw, tb, tw2, tb2 = (Tensor(a, requires_grad=True) for a in (x, w, b, w2, b2))

        def run(tape):
            h = tape.relu(tape.conv1d(tx, tw, tb, d))
            h = tape.global_avg_pool(h)
            return tape.mse_loss(tape.dense(h, tw2, tb2), Tensor(target))

        tape = Tape()
        grads = backward(tape, run(tape), [tx, tw, tb, tw2, tb2])

        def value():
            return float(run(Tape()).data)

        for t, g in zip((tx, tw, tb, tw2, tb2), grads):
            fd = finite_difference(value, t.data)
            assert rel_err(g, fd) < 1e-4

    @pytest.mark.parametrize("seed", range(50))
    def test_micro_magnet_against_finite_differences(self, seed):
        rng = np.random.default_rng(1000 + seed)
        cfg = MagNetConfig(kernels=(3, 5), dilations=(1, 2), channels=(4, 4), hidden=5)
        model = build(cfg, seed=seed, dtype=np.float64, validate=False)
        for p in model.parameters():
            p.data[...] = p.data + rng.normal(scale=0.1, size=p.shape)
        x = rng.normal(size=(3, 3, 16))
        while relu_margin(model, x) < 1e-3:
            x = rng.normal(size=(3, 3, 16))
        y = rng.normal(size=(3, 2))
        _, grads = loss_and_grads(model, x, y)

        def value():
            return loss_and_grads(model, x, y)[0]

        for p, g in zip(model.parameters(), grads):
            assert rel_err(g, finite_difference(value, p.data)) < 1e-4

    def test_deterministic(self):
        cfg = MagNetConfig(kernels=(3, 5), dilations=(1, 2), channels=(4, 4))
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(4, 3, 16)), rng.normal(size=(4, 2))
        a = loss_and_grads(build(cfg, 0, validate=False), x, y)
        b = loss_and_grads(build(cfg, 0, validate=False), x, y)
        assert a[0] == b[0]
        for ga, gb in zip(a[1], b[1]):
            np.testing.assert_array_equal(ga, gb)


def adam_oracle(w, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return w


class TestAdam:
    @given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3))
    def test_first_step_magnitude_is_lr(self, g):
        p = Tensor(np.array([0.7]))
        state = AdamState(lr=0.01, epsilon=0.0)
        adam_step([p], [np.array([g])], state)
        assert abs(p.data[0] - 0.7) == pytest.approx(0.01, rel=1e-9)
        assert state.t == 1

    def test_zero_gradient_keeps_params(self):
        p = Tensor(np.array([1.0, -2.0]))
        state = AdamState()
        for _ in range(10):
            adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_quadratic_against_scalar_recurrence(self):
        p = Tensor(np.array([0.0]))
        state = AdamState(lr=0.1)
        for _ in range(200):
            adam_step([p], [2 * (p.data - 5.0)], state)
        expected = adam_oracle(0.0, lambda w: 2 * (w - 5.0), 200, 0.1)
        assert abs(p.data[0] - 5.0) < 0.1
        assert p.data[0] == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step([Tensor(np.zeros(1))], [], AdamState())


class TestCountAndCheckpoint:
    def test_conv_count(self):
        assert count_params([Tensor(np.zeros((32, 3, 3))), Tensor(np.zeros(32))]) == 320

    def test_dense_count(self):
        arrays = [np.zeros((64, 128)), np.zeros(64), np.zeros((2, 64)), np.zeros(2)]
        assert count_params([Tensor(a) for a in arrays]) == 8386

    def test_roundtrip_byte_identical(self, tmp_path):
        model = build(MagNetConfig(), seed=4)
        meta = {"config": model.config.to_dict(), "note": "x"}
        write_checkpoint(tmp_path / "a.magn", [(n, p.data) for n, p in model.named_parameters()], meta)
        meta2, blobs = read_checkpoint(tmp_path / "a.magn")
        write_checkpoint(tmp_path / "b.magn", blobs, meta2)
        assert (tmp_path / "a.magn").read_bytes() == (tmp_path / "b.magn").read_bytes()
        for (_, a), (_, p) in zip(blobs, model.named_parameters()):
            np.testing.assert_array_equal(a, p.data)

    def test_version_mismatch_refused(self):
        buf = bytearray(encode_checkpoint([("w", np.ones(2, np.float32))], {"config": {}}))
        buf[4] = 99
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(buf))

    def test_digest_mismatch_refused(self, tmp_path):
        write_checkpoint(tmp_path / "c.magn", [("w", np.ones(2, np.float32))], {"config": {"a": 1}})
        with pytest.raises(CheckpointError, match="digest"):
            read_checkpoint(tmp_path / "c.magn", expected_digest="0" * 64)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=0, max_size=3))
    def test_roundtrip_any_shape(self, shape):
        arr = np.arange(int(np.prod(shape)), dtype=np.float32).reshape(shape)
        meta, blobs = decode_checkpoint(encode_checkpoint([("a", arr)], {"config": {}}))
        np.testing.assert_array_equal(blobs[0][1], arr)
