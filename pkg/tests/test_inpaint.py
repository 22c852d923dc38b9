import numpy as np
import pytest

from muralkit import diffcore as dc
from muralkit.diffcore import Tensor, finite_diff_check
from muralkit.errors import ArgumentError
from muralkit.inpaint import (
    AttentionBlock,
    LocalRefiner,
    PatchDiscriminator,
    UNetBackbone,
    attention_apply,
    coarse_inpaint,
    discriminate,
    global_refine,
    local_refine,
    make_coarse,
    make_global,
    merge_with_mask,
)


def rand_img(seed, n=1, size=256, c=3, dtype=np.float32):
    return np.random.default_rng(seed).random((n, size, size, c)).astype(dtype)


def rand_mask(seed, size=256):
    return (np.random.default_rng(seed).random((size, size)) > 0.7).astype(np.uint8)


class TestMerge:
    def test_all_zero_mask_keeps_input(self):
        a, b = rand_img(0), rand_img(1)
        out = merge_with_mask(a, b, np.zeros((256, 256), np.uint8))
        np.testing.assert_array_equal(out, a)

    def test_all_one_mask_takes_output(self):
        a, b = rand_img(2), rand_img(3)
        out = merge_with_mask(a, b, np.ones((256, 256), np.uint8))
        np.testing.assert_array_equal(out, b)

    def test_checkerboard_elementwise_oracle(self):
        a, b = rand_img(4, size=16), rand_img(5, size=16)
        m = np.indices((16, 16)).sum(axis=0) % 2
        out = merge_with_mask(a, b, m.astype(np.uint8))
        for i in range(16):
            for j in range(16):
                expect = b[0, i, j] if m[i, j] else a[0, i, j]
                np.testing.assert_array_equal(out[0, i, j], expect)

    def test_valid_region_preserved_bit_exact(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            a = rng.random((1, 16, 16, 3), dtype=np.float32)
            b = rng.random((1, 16, 16, 3), dtype=np.float32)
            m = (rng.random((16, 16)) > 0.5).astype(np.uint8)
            out = merge_with_mask(a, b, m)
            keep = m == 0
            np.testing.assert_array_equal(out[0][keep], a[0][keep])

    def test_tensor_path_matches_array_path(self):
        a, b = rand_img(7, size=16), rand_img(8, size=16)
        m = rand_mask(9, size=16)
        arr = merge_with_mask(a, b, m)
        ten = merge_with_mask(Tensor(a), Tensor(b), m)
        np.testing.assert_array_equal(ten.data, arr)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            merge_with_mask(rand_img(10, size=16), rand_img(11, size=32), rand_mask(12, 16))


class TestCoarseNet:
    def test_output_shape_256_and_512(self):
        net = make_coarse(width=2)
        for size in (256, 512):
            out = coarse_inpaint(net, rand_img(13, size=size), np.zeros((size, size), np.uint8))
            assert out.data.shape == (1, size, size, 3)

    def test_determinism(self):
        net = make_coarse(width=2)
        img, m = rand_img(14), rand_mask(15)
        with dc.no_grad():
            a = coarse_inpaint(net, img, m).data
            b = coarse_inpaint(net, img, m).data
        np.testing.assert_array_equal(a, b)

    def test_zero_weights_give_half(self):
        net = make_coarse(width=2)
        for p in net.params():
            p.data = np.zeros_like(p.data)
        with dc.no_grad():
            out = coarse_inpaint(net, rand_img(16), rand_mask(17))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-7)

    def test_output_in_unit_range(self):
        net = make_coarse(width=2, seed=99, zero_head=False)
        with dc.no_grad():
            out = coarse_inpaint(net, rand_img(18), rand_mask(19))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_rejects_non_multiple_dims(self):
        net = make_coarse(width=2)
        with pytest.raises(ArgumentError):
            coarse_inpaint(net, rand_img(20, size=128), np.zeros((128, 128), np.uint8))

    def test_exactly_eight_halvings(self):
        net = make_coarse(width=2)
        assert len(net.encoder) == 8 and len(net.decoder) == 8

    def test_channel_cap(self):
        net = make_coarse(width=16)
        assert max(net.enc_channels) == 128


class TestAttention:
    def test_zero_value_projection_is_identity(self):
        rng = np.random.default_rng(21)
        block = AttentionBlock(8, np.random.default_rng(0), "att")
        block.v.w.data = np.zeros_like(block.v.w.data)
        block.v.b.data = np.zeros_like(block.v.b.data)
        block.out.b.data = np.zeros_like(block.out.b.data)
        x = Tensor(rng.random((1, 8, 8, 8)).astype(np.float32))
        out = attention_apply(x, block)
        np.testing.assert_allclose(out.data, x.data, atol=1e-7)

    def test_uniform_features_uniform_weights(self):
        block = AttentionBlock(4, np.random.default_rng(1), "att")
        x = Tensor(np.full((1, 4, 4, 4), 0.7, np.float32))
        w = block.attention_weights(x)
        np.testing.assert_allclose(w, 1.0 / 16, atol=1e-6)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(22)
        block = AttentionBlock(4, np.random.default_rng(2), "att", dtype=np.float64)
        x = rng.random((1, 8, 8, 4))
        out = block(Tensor(x)).data

        def conv1x1(arr, conv):
            return arr @ conv.w.data[0, 0] + conv.b.data

        q = conv1x1(x, block.q).reshape(64, 4)
        k = conv1x1(x, block.k).reshape(64, 4)
        v = conv1x1(x, block.v).reshape(64, 4)
        ref = np.zeros((64, 4))
        for i in range(64):
            scores = np.array([q[i] @ k[j] /2.0 for j in range(64)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            ref[i] = sum(w[j] * v[j] for j in range(64))
        ref = conv1x1(ref.reshape(1, 8, 8, 4), block.out) + x
        np.testing.assert_allclose(out, ref, atol=1e-5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(23)
        block = AttentionBlock(6, np.random.default_rng(3), "att")
        w = block.attention_weights(Tensor(rng.random((1, 8, 8, 6)).astype(np.float32)))
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-5)

    def test_rejects_non_square(self):
        block = AttentionBlock(4, np.random.default_rng(4), "att")
        with pytest.raises(ArgumentError):
            attention_apply(Tensor(np.zeros((1, 4, 8, 4), np.float32)), block)


class TestGlobalNet:
    def test_shape_and_attention_resolutions(self):
        net = make_global(width=2)
        assert sorted(net.attention_blocks.keys()) == [2, 3, 4]
        with dc.no_grad():
            out = global_refine(net, rand_img(24))
        assert out.data.shape == (1, 256, 256, 3)

    def test_attention_rows_sum_to_one_at_all_levels(self):
        net = make_global(width=2)
        captured = {}
        for level, block in list(net.attention_blocks.items()):

            def wrapped(x, _b=block, _lvl=level):
                captured[_lvl] = _b.attention_weights(x)
                return _b(x)

            net.attention_blocks[level] = wrapped
        with dc.no_grad():
            global_refine(net, rand_img(25))
        assert sorted(captured.keys()) == [2, 3, 4]
        for level, w in captured.items():
            assert w.shape[-1] == (256 // 2**level) ** 2
            np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-5)

    def test_identity_attention_matches_plain_backbone(self):
        netg = make_global(width=2, seed=7)
        plain = UNetBackbone(3, width=2, attention=False, seed=7, prefix="netg")
        for block in netg.attention_blocks.values():
            block.v.w.data = np.zeros_like(block.v.w.data)
            block.v.b.data = np.zeros_like(block.v.b.data)
            block.out.b.data = np.zeros_like(block.out.b.data)
        img = rand_img(26)
        with dc.no_grad():
            a = global_refine(netg, img).data
            b = plain(Tensor(img)).data
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestLocalNet:
    def test_shape_preserved(self):
        net = LocalRefiner(width=8)
        with dc.no_grad():
            out = local_refine(net, rand_img(27, size=64))
        assert out.data.shape == (1, 64, 64, 3)

    def test_zero_net_gives_half(self):
        net = LocalRefiner(width=8)
        for p in net.params():
            p.data = np.zeros_like(p.data)
        with dc.no_grad():
            out = local_refine(net, rand_img(28, size=32))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-7)

    def test_receptive_field_probe(self):
        net = LocalRefiner(width=8, seed=5, zero_head=False)
        rf = net.receptive_field()
        radius = (rf - 1) // 2
        assert rf <= 61
        base = rand_img(29, size=64)
        center = 32
        with dc.no_grad():
            out_a = local_refine(net, base).data
        poked = base.copy()
        far = center + radius + 3
        poked[0, far, far, :] = 1.0 - poked[0, far, far, :]
        with dc.no_grad():
            out_b = local_refine(net, poked).data
        assert out_a[0, center, center] == pytest.approx(out_b[0, center, center], abs=0)

    def test_perturbation_within_field_changes_output(self):
        net = LocalRefiner(width=8, seed=6, zero_head=False)
        base = rand_img(30, size=64)
        with dc.no_grad():
            out_a = local_refine(net, base).data
        poked = base.copy()
        poked[0, 32, 32, :] = 1.0 - poked[0, 32, 32, :]
        with dc.no_grad():
            out_b = local_refine(net, poked).data
        assert not np.allclose(out_a[0, 32, 32], out_b[0, 32, 32])

    def test_smaller_field_than_coarse(self):
        # the coarse net sees the whole 256 tile through 8 halvings
        assert LocalRefiner(width=8).receptive_field() < 256

    def test_identity_factors_supported(self):
        net = LocalRefiner(width=8, factors=(1, 1))
        with dc.no_grad():
            out = local_refine(net, rand_img(31, size=32))
        assert out.data.shape == (1, 32, 32, 3)
        assert net.receptive_field() <= 61


class TestDiscriminator:
    def test_score_map_shape(self):
        d = PatchDiscriminator(width=4)
        with dc.no_grad():
            out = discriminate(d, rand_img(32))
        assert out.data.shape == (1, 32, 32, 1)

    def test_determinism(self):
        d = PatchDiscriminator(width=4)
        img = rand_img(33)
        with dc.no_grad():
            a = discriminate(d, img).data
            b = discriminate(d, img).data
        np.testing.assert_array_equal(a, b)

    def test_spectral_scale_invariance(self):
        d1 = PatchDiscriminator(width=4, seed=11)
        d2 = PatchDiscriminator(width=4, seed=11)
        for block in d2.blocks + [d2.head]:
            block.w.data = block.w.data * 10.0
        for b1, b2 in zip(d1.blocks + [d1.head], d2.blocks + [d2.head]):
            w1 = b1.normalized_weight(update_state=False).data
            w2 = b2.normalized_weight(update_state=False).data
            np.testing.assert_allclose(w1, w2, rtol=1e-5)

    def test_rejects_wrong_dims(self):
        d = PatchDiscriminator(width=4)
        with pytest.raises(ArgumentError):
            discriminate(d, rand_img(34, size=128))


def randomize_biases(params, seed=100):
    """Push biases off zero so no pre-activation sits exactly on a ReLU kink."""
    rng = np.random.default_rng(seed)
    for p in params:
        if p.name.endswith(".b"):
            p.data = rng.uniform(0.05, 0.15, p.data.shape)


class TestGradients:
    def test_local_refiner_gradcheck(self):
        net = LocalRefiner(width=4, seed=8, dtype=np.float64, zero_head=False)
        randomize_biases(net.params())
        x = Tensor(np.random.default_rng(35).random((1, 8, 8, 3)))
        rng = np.random.default_rng(0)
        err = finite_diff_check(
            lambda: dc.tmean(dc.square(net(x))), net.params(), rng, samples_per_param=2
        )
        assert err < 1e-3

    def test_discriminator_gradcheck(self):
        d = PatchDiscriminator(width=2, seed=9, dtype=np.float64)
        randomize_biases(d.params())
        x = Tensor(np.random.default_rng(36).random((1, 256, 256, 3)))
        rng = np.random.default_rng(1)
        err = finite_diff_check(
            lambda: dc.tmean(dc.square(d(x, update_state=False))),
            d.params(),
            rng,
            samples_per_param=1,
        )
        assert err < 1e-3
