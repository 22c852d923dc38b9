import numpy as np
import pytest

from muralkit import diffcore as dc
from muralkit.diffcore import (
    Adam,
    Conv,
    Parameter,
    PowerIterState,
    Sequential,
    SpectralConv,
    Tensor,
    clip_global_norm,
    finite_diff_check,
    spectral_normalize,
)
from muralkit.errors import ArgumentError, NonFiniteError

RNG = np.random.default_rng


def rand_t(rng, *shape, grad=True):
    return Parameter(rng.standard_normal(shape), "p") if grad else Tensor(rng.standard_normal(shape))


def fd_scalar(build, params, rng, samples=6, step=1e-5):
    return finite_diff_check(build, params, rng, samples_per_param=samples, step=step)


class TestElementwiseOps:
    @pytest.mark.parametrize(
        "op",
        [
            lambda a, b: a + b,
            lambda a, b: a - b,
            lambda a, b: a * b,
            lambda a, b: a / (b * b + 1.0),
            lambda a, b: dc.exp(a * 0.3) + b,
            lambda a, b: dc.square(a) * b,
            lambda a, b: dc.sigmoid(a) + dc.sigmoid(b),
            lambda a, b: dc.leaky_relu(a) * b,
        ],
    )
    def test_binary_gradients(self, op):
        rng = RNG(0)
        a = Parameter(rng.standard_normal((4, 5)), "a")
        b = Parameter(rng.standard_normal((4, 5)), "b")
        err = fd_scalar(lambda: dc.tsum(op(a, b)), [a, b], rng)
        assert err < 1e-5

    def test_relu_forward(self):
        out = dc.relu(Tensor(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_abs_gradient_away_from_kink(self):
        rng = RNG(1)
        a = Parameter(rng.standard_normal((6,)) + 3.0, "a")
        err = fd_scalar(lambda: dc.tsum(dc.absolute(a)), [a], rng)
        assert err < 1e-6

    def test_maximum_floor(self):
        a = Parameter(np.array([0.5, -0.5]), "a")
        out = dc.maximum(a, 1e-4)
        np.testing.assert_allclose(out.data, [0.5, 1e-4])
        dc.tsum(out).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 0.0])

    def test_bias_broadcast_gradient(self):
        rng = RNG(2)
        x = Parameter(rng.standard_normal((2, 3, 3, 4)), "x")
        b = Parameter(rng.standard_normal((4,)), "b")
        err = fd_scalar(lambda: dc.tmean((x + b) * (x + b)), [x, b], rng)
        assert err < 1e-5

    def test_mean_axis(self):
        rng = RNG(3)
        a = Parameter(rng.standard_normal((3, 4)), "a")
        err = fd_scalar(lambda: dc.tsum(dc.tmean(a, axis=1) * 2.0), [a], rng)
        assert err < 1e-6


class TestShapeOps:
    def test_reshape_transpose_concat_crop(self):
        rng = RNG(4)
        a = Parameter(rng.standard_normal((2, 3, 4)), "a")
        b = Parameter(rng.standard_normal((2, 3, 4)), "b")

        def build():
            cat = dc.concat([a, b], axis=2)
            t = dc.transpose(cat, (0, 2, 1))
            r = dc.reshape(t, (2, 24))
            s = dc.crop(r, (slice(None), slice(1, 20)))
            return dc.tsum(dc.square(s))

        assert fd_scalar(build, [a, b], rng) < 1e-5

    def test_matmul_batched(self):
        rng = RNG(5)
        a = Parameter(rng.standard_normal((2, 3, 4)), "a")
        b = Parameter(rng.standard_normal((2, 4, 5)), "b")
        err = fd_scalar(lambda: dc.tsum(dc.square(dc.matmul(a, b))), [a, b], rng)
        assert err < 1e-5

    def test_softmax_rows_sum_to_one(self):
        rng = RNG(6)
        s = dc.softmax(Tensor(rng.standard_normal((5, 7))), axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_gradient(self):
        rng = RNG(7)
        a = Parameter(rng.standard_normal((3, 6)), "a")
        w = Tensor(rng.standard_normal((3, 6)))
        err = fd_scalar(lambda: dc.tsum(dc.softmax(a, axis=-1) * w), [a], rng)
        assert err < 1e-5


class TestSpatialOps:
    def test_conv_matches_naive_loops(self):
        rng = RNG(8)
        x = rng.standard_normal((1, 8, 8, 3))
        w = rng.standard_normal((3, 3, 3, 5))
        out = dc.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        ref = np.zeros((1, 8, 8, 5))
        for i in range(8):
            for j in range(8):
                for co in range(5):
                    acc = 0.0
                    for a in range(3):
                        for b in range(3):
                            for ci in range(3):
                                acc += xp[0, i + a, j + b, ci] * w[a, b, ci, co]
                    ref[0, i, j, co] = acc
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_zero_kernel_zero_output(self):
        rng = RNG(9)
        x = Tensor(rng.standard_normal((1, 6, 6, 2)))
        out = dc.conv2d(x, Tensor(np.zeros((3, 3, 2, 4))), padding=1)
        assert np.all(out.data == 0)

    @pytest.mark.parametrize("stride,size", [(1, 8), (2, 8), (2, 6)])
    def test_conv_gradients(self, stride, size):
        rng = RNG(10 + stride + size)
        x = Parameter(rng.standard_normal((2, size, size, 3)), "x")
        w = Parameter(rng.standard_normal((3, 3, 3, 4)), "w")
        err = fd_scalar(
            lambda: dc.tsum(dc.square(dc.conv2d(x, w, stride=stride, padding=1))),
            [x, w],
            rng,
        )
        assert err < 1e-4

    def test_conv1x1_gradients(self):
        rng = RNG(11)
        x = Parameter(rng.standard_normal((1, 5, 5, 4)), "x")
        w = Parameter(rng.standard_normal((1, 1, 4, 6)), "w")
        err = fd_scalar(lambda: dc.tsum(dc.square(dc.conv2d(x, w))), [x, w], rng)
        assert err < 1e-5

    def test_conv_channel_mismatch(self):
        with pytest.raises(ArgumentError):
            dc.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 4))))

    def test_upsample_forward_and_grad(self):
        rng = RNG(12)
        x = Parameter(rng.standard_normal((1, 3, 3, 2)), "x")
        up = dc.upsample_nearest(x, 2)
        assert up.shape == (1, 6, 6, 2)
        np.testing.assert_array_equal(up.data[0, :2, :2, 0], np.full((2, 2), x.data[0, 0, 0, 0]))
        err = fd_scalar(lambda: dc.tsum(dc.square(dc.upsample_nearest(x, 2))), [x], rng)
        assert err < 1e-6

    def test_max_pool_forward_and_grad(self):
        rng = RNG(13)
        x = Parameter(rng.standard_normal((2, 6, 6, 3)), "x")
        out = dc.max_pool2x2(x)
        assert out.shape == (2, 3, 3, 3)
        ref = x.data.reshape(2, 3, 2, 3, 2, 3).max(axis=(2, 4))
        np.testing.assert_allclose(out.data, ref)
        err = fd_scalar(lambda: dc.tsum(dc.square(dc.max_pool2x2(x))), [x], rng)
        assert err < 1e-5


class TestNetworks:
    def test_two_layer_net_oracle(self):
        rng = RNG(14)
        net = Sequential(
            [
                Conv(3, 4, rng=np.random.default_rng(1), name="c1", dtype=np.float64),
                dc.Activation("relu"),
                Conv(4, 2, rng=np.random.default_rng(2), name="c2", dtype=np.float64),
            ]
        )
        x = Tensor(rng.standard_normal((1, 8, 8, 3)))
        out = net(x)
        # naive composition oracle
        h = np.zeros((1, 8, 8, 4))
        xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
        w1, b1 = net.layers[0].w.data, net.layers[0].b.data
        for i in range(8):
            for j in range(8):
                h[0, i, j] = (
                    np.tensordot(xp[0, i : i + 3, j : j + 3], w1, axes=([0, 1, 2], [0, 1, 2])) + b1
                )
        h = np.maximum(h, 0)
        hp = np.pad(h, ((0, 0), (1, 1), (1, 1), (0, 0)))
        w2, b2 = net.layers[1 + 1].w.data, net.layers[2].b.data
        ref = np.zeros((1, 8, 8, 2))
        for i in range(8):
            for j in range(8):
                ref[0, i, j] = (
                    np.tensordot(hp[0, i : i + 3, j : j + 3], w2, axes=([0, 1, 2], [0, 1, 2])) + b2
                )
        np.testing.assert_allclose(out.data, ref, atol=1e-6)

    def test_network_finite_diff(self):
        rng = RNG(15)
        net = Sequential(
            [
                Conv(2, 4, rng=np.random.default_rng(3), name="c1", dtype=np.float64),
                dc.Activation("relu"),
                Conv(4, 4, stride=2, rng=np.random.default_rng(4), name="c2", dtype=np.float64),
                dc.Activation("leaky_relu"),
                Conv(4, 1, rng=np.random.default_rng(5), name="c3", dtype=np.float64),
            ]
        )
        x = Tensor(rng.standard_normal((1, 8, 8, 2)))
        err = finite_diff_check(
            lambda: dc.tmean(dc.square(net(x))), net.params(), rng, samples_per_param=4
        )
        assert err < 1e-3

    def test_corrupted_gradient_detected(self):
        rng = RNG(16)
        conv = Conv(2, 2, rng=np.random.default_rng(6), name="c", dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 6, 6, 2)))

        calls = {"n": 0}

        def build():
            out = dc.tmean(dc.square(conv(x)))
            return out

        # corrupt the analytic gradient by scaling the weight data between
        # the analytic pass and the numeric probes via a wrapped loss
        err_clean = finite_diff_check(build, conv.params(), rng)
        assert err_clean < 1e-3

        real_backward = dc.Tensor.backward

        def bad_backward(self, grad=None):
            real_backward(self, grad)
            conv.w.grad = conv.w.grad * 1.5

        dc.Tensor.backward = bad_backward
        try:
            err_bad = finite_diff_check(build, [conv.w], rng)
        finally:
            dc.Tensor.backward = real_backward
        assert err_bad > 0.1

    def test_zero_output_grad_means_zero_grads(self):
        rng = RNG(17)
        conv = Conv(2, 2, rng=np.random.default_rng(7), name="c")
        x = Tensor(rng.standard_normal((1, 4, 4, 2)).astype(np.float32))
        out = conv(x)
        out.backward(np.zeros_like(out.data))
        assert np.all(conv.w.grad == 0) and np.all(conv.b.grad == 0)

    def test_sequential_shape_error_names_layer(self):
        net = Sequential([Conv(3, 4, name="a"), Conv(8, 4, name="b")])
        with pytest.raises(ArgumentError, match="layer 1"):
            net(Tensor(np.zeros((1, 4, 4, 3), np.float32)))

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            net = Sequential([Conv(3, 4, rng=rng, name="c1"), dc.Activation("relu")])
            x = Tensor(np.random.default_rng(7).standard_normal((1, 8, 8, 3)).astype(np.float32))
            out = net(x)
            loss = dc.tsum(dc.square(out))
            loss.backward()
            return out.data.copy(), net.layers[0].w.grad.copy()

        o1, g1 = run()
        o2, g2 = run()
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(g1, g2)


class TestSpectralNorm:
    def test_identity_unchanged(self):
        state = PowerIterState(u=np.ones(4) / 2.0)
        out = spectral_normalize(np.eye(4), state, iterations=5)
        np.testing.assert_allclose(out, np.eye(4), atol=1e-9)

    def test_scale_invariance(self):
        rng = RNG(18)
        w = rng.random((16, 16)) + 0.1
        s1 = PowerIterState(u=np.ones(16) / 4.0)
        s2 = PowerIterState(u=np.ones(16) / 4.0)
        n1 = spectral_normalize(w, s1, iterations=5)
        n2 = spectral_normalize(5.0 * w, s2, iterations=5)
        np.testing.assert_allclose(n1, n2, atol=1e-9)

    def test_zero_weight_unchanged(self):
        state = PowerIterState(u=np.ones(3) / np.sqrt(3))
        out = spectral_normalize(np.zeros((3, 3)), state, iterations=3)
        np.testing.assert_array_equal(out, np.zeros((3, 3)))

    def test_positive_random_matches_svd(self):
        rng = RNG(19)
        for _ in range(20):
            w = rng.random((64, 64))
            u0 = rng.standard_normal(64)
            state = PowerIterState(u=u0 / np.linalg.norm(u0))
            out = spectral_normalize(w, state, iterations=5)
            top = np.linalg.svd(out, compute_uv=False)[0]
            assert 0.95 <= top <= 1.05

    def test_persistent_state_converges_on_gaussian(self):
        rng = RNG(20)
        w = rng.standard_normal((64, 64))
        u0 = rng.standard_normal(64)
        state = PowerIterState(u=u0 / np.linalg.norm(u0))
        out = spectral_normalize(w, state, iterations=150)
        top = np.linalg.svd(out, compute_uv=False)[0]
        assert abs(top - 1.0) < 1e-3

    def test_idempotent(self):
        rng = RNG(21)
        w = rng.random((32, 32))
        state = PowerIterState(u=np.ones(32) / np.sqrt(32))
        once = spectral_normalize(w, state, iterations=5)
        twice = spectral_normalize(once, state, iterations=5)
        rel = np.abs(twice - once).max() / np.abs(once).max()
        assert rel < 1e-3

    def test_conv_kernel_flattening(self):
        rng = RNG(22)
        w = rng.random((3, 3, 4, 8))
        state = PowerIterState(u=np.ones(8) / np.sqrt(8))
        out = spectral_normalize(w, state, iterations=10)
        mat = out.transpose(3, 0, 1, 2).reshape(8, -1)
        top = np.linalg.svd(mat, compute_uv=False)[0]
        assert 0.95 <= top <= 1.05

    def test_spectral_conv_gradcheck(self):
        rng = RNG(23)
        conv = SpectralConv(3, 4, rng=np.random.default_rng(8), name="d", dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 6, 6, 3)))
        # freeze the state during the check so the loss is a pure function
        err = finite_diff_check(
            lambda: dc.tmean(dc.square(conv(x, update_state=False))),
            conv.params(),
            rng,
            samples_per_param=6,
        )
        assert err < 1e-3


class TestAdam:
    def test_zero_grad_keeps_params(self):
        p = Parameter(np.array([1.0, 2.0]), "p")
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_is_signed_lr(self):
        for g in (3.7, -0.2):
            p = Parameter(np.array([1.0]), "p")
            opt = Adam([p], lr=1e-3)
            p.grad = np.array([g])
            opt.step()
            assert abs(p.data[0] - (1.0 - 1e-3 * np.sign(g))) < 1e-6

    def test_quadratic_bowl_convergence(self):
        p = Parameter(np.array([5.0, -5.0]), "p")
        opt = Adam([p], lr=4e-3)
        dists = []
        for _ in range(1000):
            p.grad = 2.0 * p.data
            opt.step()
            dists.append(float(np.linalg.norm(p.data)))
        assert all(b <= a + 1e-12 for a, b in zip(dists[10:], dists[11:]))
        assert dists[-1] < dists[0] / 2

    def test_nonfinite_gradient_reports_name(self):
        p = Parameter(np.array([1.0]), "enh.h.c1.w")
        opt = Adam([p])
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteError, match="enh.h.c1.w"):
            opt.step()

    def test_clip_global_norm(self):
        a = Parameter(np.array([3.0]), "a")
        b = Parameter(np.array([4.0]), "b")
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        norm = clip_global_norm([a, b], 1.0)
        assert abs(norm - 5.0) < 1e-12
        total = np.sqrt(a.grad[0] ** 2 + b.grad[0] ** 2)
        assert abs(total - 1.0) < 1e-9
