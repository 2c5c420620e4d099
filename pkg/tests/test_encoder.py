import numpy as np
import pytest

from sixdpose.encoder import (
    Architecture,
    EncoderParams,
    decode,
    encode,
    gradient_check,
    init_params,
    loss,
    loss_and_grads,
    reconstruct,
    zero_params,
)

TINY = Architecture(input_size=8, input_channels=2, conv_channels=(3, 4), kernel=3, latent_dim=5)


# --------------------------------------------------------------------------
# independent straight-loop forward oracle (no vectorized tricks)

def _oracle_conv(x, w, b, stride):
    h, wd, cin = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.zeros((h + 2 * pad, wd + 2 * pad, cin))
    xp[pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, w.shape[3]))
    for i in range(ho):
        for j in range(wo):
            for co in range(w.shape[3]):
                acc = 0.0
                for ki in range(k):
                    for kj in range(k):
                        for ci in range(cin):
                            acc += xp[i * stride + ki, j * stride + kj, ci] * w[ki, kj, ci, co]
                out[i, j, co] = acc + b[co]
    return out


def _oracle_encode(params, image):
    t = params.tensors
    h = image
    for i in range(len(params.arch.conv_channels)):
        h = np.maximum(_oracle_conv(h, t[f"enc_conv{i}_w"], t[f"enc_conv{i}_b"], 2), 0.0)
    flat = h.reshape(-1)
    return flat @ t["enc_fc_w"] + t["enc_fc_b"]


def _oracle_decode(params, z):
    t = params.tensors
    arch = params.arch
    h = np.maximum(z @ t["dec_fc_w"] + t["dec_fc_b"], 0.0)
    s = arch.bottleneck_size
    h = h.reshape(s, s, arch.conv_channels[-1])
    stages = len(arch.conv_channels)
    for i in range(stages):
        up = h.repeat(2, axis=0).repeat(2, axis=1)
        pre = _oracle_conv(up, t[f"dec_conv{i}_w"], t[f"dec_conv{i}_b"], 1)
        h = np.maximum(pre, 0.0) if i < stages - 1 else 1.0 / (1.0 + np.exp(-pre))
    return h


class TestForward:
    def test_zero_params_zero_latent(self):
        zp = zero_params(TINY)
        x = np.random.default_rng(0).uniform(size=(8, 8, 2))
        assert np.all(encode(zp, x) == 0.0)

    def test_zero_params_decode_half(self):
        zp = zero_params(TINY)
        out = decode(zp, np.zeros(5))
        assert np.allclose(out, 0.5)

    def test_deterministic(self):
        params = init_params(TINY, seed=1)
        x = np.random.default_rng(2).uniform(size=(8, 8, 2))
        assert np.array_equal(encode(params, x), encode(params, x))

    def test_shape_mismatch_rejected(self):
        params = init_params(TINY, seed=1)
        with pytest.raises(ValueError):
            encode(params, np.zeros((16, 16, 2)))
        with pytest.raises(ValueError):
            decode(params, np.zeros(7))

    def test_encode_matches_straight_loop_oracle(self):
        params = init_params(TINY, seed=3)
        x = np.random.default_rng(4).uniform(size=(8, 8, 2))
        assert np.abs(encode(params, x) - _oracle_encode(params, x)).max() < 1e-6

    def test_decode_matches_straight_loop_oracle(self):
        params = init_params(TINY, seed=5)
        z = np.random.default_rng(6).normal(size=5)
        assert np.abs(decode(params, z) - _oracle_decode(params, z)).max() < 1e-6

    def test_batch_matches_single(self):
        params = init_params(TINY, seed=7)
        x = np.random.default_rng(8).uniform(size=(3, 8, 8, 2))
        batch = encode(params, x)
        for i in range(3):
            assert np.abs(batch[i] - encode(params, x[i])).max() < 1e-12


class TestLoss:
    def test_perfect_reconstruction_loss_near_zero(self):
        # the 1e-12 guard inside the square root makes this 1e-6 per sample
        params = init_params(TINY, seed=1)
        x = np.random.default_rng(2).uniform(size=(2, 8, 8, 2))
        target = reconstruct(params, x)
        assert loss(params, x, target) == pytest.approx(0.0, abs=1e-5)

    def test_three_four_five(self):
        params = init_params(TINY, seed=3)
        x = np.random.default_rng(4).uniform(size=(1, 8, 8, 2))
        recon = reconstruct(params, x)
        pattern = np.zeros_like(recon)
        pattern[0, 0, 0, 0] = 3.0
        pattern[0, 0, 1, 0] = 4.0
        assert loss(params, x, recon - pattern) == pytest.approx(5.0, abs=1e-9)

    def test_matches_brute_force_norm_sum(self):
        params = init_params(TINY, seed=5)
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(4, 8, 8, 2))
        target = rng.uniform(size=(4, 8, 8, 2))
        recon = reconstruct(params, x)
        oracle = sum(
            np.sqrt(((recon[i] - target[i]) ** 2).sum() + 1e-12) for i in range(4)
        )
        assert loss(params, x, target) == pytest.approx(oracle, abs=1e-9)

    def test_nonnegative(self):
        params = init_params(TINY, seed=7)
        rng = np.random.default_rng(8)
        for _ in range(5):
            x = rng.uniform(size=(2, 8, 8, 2))
            t = rng.uniform(size=(2, 8, 8, 2))
            assert loss(params, x, t) >= 0.0

    def test_empty_batch_rejected(self):
        params = init_params(TINY, seed=1)
        with pytest.raises(ValueError):
            loss(params, np.zeros((0, 8, 8, 2)), np.zeros((0, 8, 8, 2)))


def make_linear_toy():
    """One conv stage, biases at 0.5 (ReLUs firmly on), damped weights.

    Locally linear through every ReLU; remaining curvature (sigmoid, norm)
    is far below the finite-difference resolution.
    """
    arch = Architecture(input_size=4, input_channels=1, conv_channels=(2,), kernel=3, latent_dim=3)
    params = init_params(arch, seed=3)
    for name in params.tensors:
        if name.endswith("_b"):
            params.tensors[name][:] = 0.5
        else:
            params.tensors[name] *= 0.3
    x = np.random.default_rng(5).uniform(0.2, 0.8, size=(1, 4, 4, 1))
    t = np.zeros((1, 4, 4, 1))
    return params, x, t


class TestGradients:
    def test_linear_toy_below_1e7(self):
        params, x, t = make_linear_toy()
        assert gradient_check(params, x, t, n_checks=200, seed=9) < 1e-7

    def test_small_conv_stack(self):
        arch = Architecture(input_size=8, input_channels=1, conv_channels=(2, 3, 4), kernel=3, latent_dim=4)
        params = init_params(arch, seed=0)
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(2, 8, 8, 1))
        t = rng.uniform(size=(2, 8, 8, 1))
        assert gradient_check(params, x, t, n_checks=300, seed=2) < 1e-4

    def test_dead_unit_guard_no_nan(self):
        arch = Architecture(input_size=8, input_channels=1, conv_channels=(2, 3), kernel=3, latent_dim=4)
        params = init_params(arch, seed=4)
        # drive one filter permanently off: zero weights, strongly negative bias
        params.tensors["enc_conv0_w"][:, :, :, 0] = 0.0
        params.tensors["enc_conv0_b"][0] = -100.0
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(1, 8, 8, 1))
        t = rng.uniform(size=(1, 8, 8, 1))
        err = gradient_check(params, x, t, n_checks=200, seed=6)
        assert np.isfinite(err)
        assert err < 1e-4

    def test_grads_cover_every_tensor(self):
        params = init_params(TINY, seed=1)
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(2, 8, 8, 2))
        t = rng.uniform(size=(2, 8, 8, 2))
        value, grads = loss_and_grads(params, x, t)
        assert value > 0
        assert set(grads) == set(params.tensors)
        for name, g in grads.items():
            assert g.shape == params.tensors[name].shape


class TestParams:
    def test_init_deterministic(self):
        a = init_params(TINY, seed=42)
        b = init_params(TINY, seed=42)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_shape_validation(self):
        good = init_params(TINY, seed=0)
        bad = dict(good.tensors)
        bad["enc_fc_b"] = np.zeros(99)
        with pytest.raises(ValueError):
            EncoderParams(TINY, bad)

    def test_arch_validation(self):
        with pytest.raises(ValueError):
            Architecture(input_size=10, conv_channels=(4, 4))  # 10/4 not integral
        with pytest.raises(ValueError):
            Architecture(latent_dim=1)

    def test_num_parameters(self):
        assert init_params(TINY, 0).num_parameters() > 0
