import numpy as np
import pytest

from tomlab.nn import (
    Tape,
    Tensor,
    backward,
    grad_check,
    kernels,
    load_checkpoint,
    save_checkpoint,
    set_default_dtype,
)
from tomlab.nn import layers as L
from tomlab.nn import tensor as T
from tomlab.nn import _kernels_np as knp
from tomlab.nn.optim import Adam


@pytest.fixture(autouse=True)
def float64_mode():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float32)


class TestForwardExamples:
    def test_relu(self):
        y = T.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(y.data, [0.0, 0.0, 2.0])

    def test_softmax_of_zeros_is_uniform(self):
        y = T.softmax(Tensor(np.zeros((1, 5))))
        assert np.allclose(y.data, 0.2)
        assert abs(y.data.sum() - 1.0) < 1e-6

    def test_sigmoid_in_open_interval(self):
        y = T.sigmoid(Tensor(np.linspace(-20, 20, 41)))
        assert ((y.data > 0) & (y.data < 1)).all()

    def test_identity_conv(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 5, 5, 3)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0] = np.eye(3)
        y = T.conv2d(x, Tensor(w))
        assert np.allclose(y.data, x.data)

    def test_conv_shape_error_names_layer(self):
        x = Tensor(np.zeros((1, 5, 5, 3)))
        w = Tensor(np.zeros((3, 3, 4, 8)))
        with pytest.raises(ValueError, match="conv2d"):
            T.conv2d(x, w)

    def test_spatial_tile(self):
        v = Tensor(np.array([[0.0, 0.0, 1.0, 0.0, 0.0]]))
        y = T.spatial_tile(v, 11, 11)
        assert y.shape == (1, 11, 11, 5)
        assert (y.data[0, :, :, 2] == 1).all()
        assert y.data[0, :, :, [0, 1, 3, 4]].sum() == 0


class TestBackwardIdentities:
    def test_softmax_nll_gradient_is_p_minus_onehot(self):
        rng = np.random.default_rng(0)
        logits = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        onehot = np.zeros((4, 5))
        onehot[np.arange(4), [1, 0, 3, 2]] = 1.0
        with Tape() as tape:
            logp = T.log_softmax(logits)
            loss = T.scale(T.sum_all(T.mul(logp, Tensor(onehot))), -1.0)
        backward(tape, loss)
        p = np.exp(T.log_softmax(Tensor(logits.data)).data)
        assert np.allclose(logits.grad, p - onehot, atol=1e-12)

    def test_linear_weight_gradient_is_input(self):
        x = np.array([[1.0, -2.0, 3.0]])
        w = Tensor(np.zeros((3, 1)), requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.matmul(Tensor(x), w))
        backward(tape, loss)
        assert np.array_equal(w.grad, x.T)

    def test_grad_accumulates_across_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.add(T.mul(x, x), x))  # x^2 + x
        backward(tape, loss)
        assert np.allclose(x.grad, [5.0])

    def test_backward_requires_closed_tape(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(RuntimeError):
            with Tape() as tape:
                loss = T.sum_all(x)
                backward(tape, loss)

    def test_backward_before_forward_is_contract_violation(self):
        with Tape() as tape:
            pass
        with pytest.raises(RuntimeError, match="backward before forward"):
            backward(tape, Tensor(np.asarray(0.0)))


class TestGradCheckAllLayers:
    """Autodiff vs central differences, 64-bit, tolerance 1e-4."""

    def check(self, fn, params, tol=1e-4):
        err = grad_check(fn, params, max_samples=400)
        assert err < tol, f"max rel error {err}"

    def test_dense_relu_chain(self):
        # seed chosen so every relu pre-activation clears the kink by > 0.03:
        # an eps=1e-3 parameter nudge cannot flip any activation sign.
        rng = np.random.default_rng(0)
        lin1 = L.Dense(7, 9, rng)
        lin2 = L.Dense(9, 3, rng)
        x = Tensor(rng.standard_normal((4, 7)))
        assert np.abs(lin1(x).data).min() > 0.03

        def fn():
            return T.sum_all(T.square(lin2(T.relu(lin1(x)))))

        self.check(fn, lin1.parameters() + lin2.parameters())

    def test_conv_relu_net(self):
        # seed chosen to keep pre-activations away from relu kinks (see above)
        rng = np.random.default_rng(14)
        c1 = L.Conv2d(2, 4, rng)
        c2 = L.Conv2d(4, 2, rng, kernel=1)
        x = Tensor(rng.standard_normal((1, 5, 5, 2)))
        assert np.abs(c1(x).data).min() > 0.02

        def fn():
            return T.mean_all(T.square(c2(T.relu(c1(x)))))

        self.check(fn, c1.parameters() + c2.parameters())

    def test_lstm_step(self):
        rng = np.random.default_rng(3)
        cell = L.LSTMCell(5, 8, rng)
        xs = [Tensor(rng.standard_normal((3, 5))) for _ in range(3)]

        def fn():
            h = c = None
            for x in xs:
                h, c = cell.step(x, h, c)
            return T.sum_all(T.square(h))

        self.check(fn, cell.parameters())

    def test_conv_lstm_step(self):
        rng = np.random.default_rng(4)
        cell = L.ConvLSTMCell(4, 6, rng)
        xs = [Tensor(rng.standard_normal((2, 5, 5, 4))) for _ in range(2)]

        def fn():
            h = c = None
            for x in xs:
                h, c = cell.step(x, h, c)
            return T.mean_all(T.square(h))

        self.check(fn, cell.parameters())

    def test_batch_norm(self):
        rng = np.random.default_rng(5)
        conv = L.Conv2d(3, 4, rng)
        bn = L.BatchNorm2d(4)
        x = Tensor(rng.standard_normal((6, 5, 5, 3)))

        def fn():
            return T.sum_all(T.square(bn(conv(x), training=True)))

        self.check(fn, conv.parameters() + bn.parameters())

    def test_softmax_pool_heads(self):
        rng = np.random.default_rng(6)
        conv = L.Conv2d(3, 4, rng)
        fc = L.Dense(4, 5, rng)
        x = Tensor(rng.standard_normal((3, 7, 7, 3)))
        target = np.zeros((3, 5))
        target[np.arange(3), [0, 2, 4]] = 1.0

        def fn():
            logits = fc(T.avg_pool_global(conv(x)))
            return T.scale(T.sum_all(T.mul(T.log_softmax(logits), Tensor(target))), -1.0)

        self.check(fn, conv.parameters() + fc.parameters())

    def test_gather_scatter_concat_slice(self):
        rng = np.random.default_rng(7)
        lin = L.Dense(6, 4, rng)
        emb = L.Dense(3, 3, rng)
        x = Tensor(rng.standard_normal((5, 3)))
        idx = np.array([3, 0, 2])

        def fn():
            feats = emb(x)
            rows = T.gather_rows(feats, idx)
            spread = T.scatter_rows(rows, idx, 5)
            both = T.concat([spread, feats], axis=-1)
            tail = T.slice_last(both, 2, 6)
            return T.add(T.sum_all(T.square(lin(both))), T.sum_all(T.square(tail)))

        self.check(fn, lin.parameters() + emb.parameters())

    def test_linear_map_is_machine_precision(self):
        rng = np.random.default_rng(8)
        lin = L.Dense(4, 1, rng, bias=False)
        x = Tensor(rng.standard_normal((2, 4)))

        def fn():
            return T.sum_all(lin(x))

        err = grad_check(fn, lin.parameters(), max_samples=8)
        assert err < 1e-9


class TestLayerContracts:
    def test_conv_lstm_zero_weights_zero_state(self):
        rng = np.random.default_rng(0)
        cell = L.ConvLSTMCell(3, 4, rng)
        for p in cell.parameters():
            p.data[:] = 0.0
        x = Tensor(np.random.default_rng(1).standard_normal((2, 5, 5, 3)))
        h, c = cell.step(x, None, None)
        assert np.allclose(h.data, 0.0)
        h2, c2 = cell.step(x, h, c)
        assert np.allclose(h2.data, 0.0)

    def test_batch_norm_eval_uses_running_stats(self):
        rng = np.random.default_rng(1)
        bn = L.BatchNorm2d(3)
        x = Tensor(rng.standard_normal((8, 4, 4, 3)) * 3 + 1)
        for _ in range(200):
            bn(x, training=True)
        y = bn(x, training=False)
        assert np.allclose(y.data.mean(axis=(0, 1, 2)), 0.0, atol=0.05)

    def test_dense_shape_error(self):
        rng = np.random.default_rng(2)
        lin = L.Dense(3, 2, rng)
        with pytest.raises(ValueError, match="fully_connected"):
            lin(Tensor(np.zeros((1, 4))))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.ones(4), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(4)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude_is_lr_times_sign(self):
        # bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g)
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam([p], lr=1e-2)
        p.grad = np.array([0.5, -2.0, 3.0])
        opt.step()
        assert np.allclose(p.data, [-1e-2, 1e-2, -1e-2], rtol=1e-6)

    def test_zero_lr_freezes_params(self):
        p = Tensor(np.ones(4), requires_grad=True)
        opt = Adam([p], lr=0.0)
        p.grad = np.ones(4)
        opt.step()
        assert np.array_equal(p.data, np.ones(4))

    def test_descends_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam([p], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            with Tape() as tape:
                loss = T.sum_all(T.square(T.sub(p, Tensor(target))))
            backward(tape, loss)
            opt.step()
        assert np.allclose(p.data, target, atol=1e-2)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "layer.w": rng.standard_normal((3, 3, 4, 8)).astype(np.float32),
            "layer.b": rng.standard_normal(8),
            "bn.running_mean": rng.standard_normal(8),
        }
        meta = {"step": 123, "config": {"channels": 8}}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, meta)
        loaded, meta2 = load_checkpoint(path)
        assert meta2 == meta
        for name, arr in arrays.items():
            assert loaded[name].dtype == arr.dtype
            assert np.array_equal(loaded[name], arr)
            assert loaded[name].tobytes() == arr.tobytes()

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(p)


class TestKernelBackends:
    def test_compiled_matches_fallback_when_available(self):
        try:
            from tomlab.nn import _kernels_cy as kcy
        except ImportError:
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(0)
        for dtype, tol in ((np.float32, 1e-4), (np.float64, 1e-10)):
            x = rng.standard_normal((5, 11, 11, 9)).astype(dtype)
            w = rng.standard_normal((3, 3, 9, 12)).astype(dtype)
            gy = rng.standard_normal((5, 11, 11, 12)).astype(dtype)
            assert np.allclose(knp.conv2d_forward(x, w), kcy.conv2d_forward(x, w),
                               atol=tol, rtol=tol)
            gx1, gw1 = knp.conv2d_backward(x, w, gy)
            gx2, gw2 = kcy.conv2d_backward(x, w, gy)
            assert np.allclose(gx1, gx2, atol=tol, rtol=tol)
            assert np.allclose(gw1, gw2, atol=tol * 10, rtol=tol * 10)

    def test_backend_reports_name(self):
        assert kernels.backend_name() in ("numpy-fallback", "cython-blas")

    def test_fallback_conv_against_direct_convolution(self):
        # independent O(k^2 HW) reference: explicit loops over taps
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 6, 7, 3))
        w = rng.standard_normal((3, 3, 3, 4))
        y = knp.conv2d_forward(x, w)
        ref = np.zeros((2, 6, 7, 4))
        for i in range(3):
            for j in range(3):
                for r in range(6):
                    rr = r + i - 1
                    if not 0 <= rr < 6:
                        continue
                    for c in range(7):
                        cc = c + j - 1
                        if not 0 <= cc < 7:
                            continue
                        ref[:, r, c, :] += x[:, rr, cc, :] @ w[i, j]
        assert np.allclose(y, ref, atol=1e-12)
