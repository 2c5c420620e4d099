import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sixdpose.augment import (
    OPERATOR_ORDER,
    AugmentationConfig,
    apply_operator,
    blur_with_sigma,
    composite_background,
    f_aug,
    identity_config,
    square_occlusion,
)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def _rand_image(seed, size=32):
    return np.random.default_rng(seed).uniform(size=(size, size, 3))


class TestCompositeBackground:
    def test_full_mask_keeps_crop(self):
        crop, bg = _rand_image(0), _rand_image(1)
        out = composite_background(crop, np.ones((32, 32), dtype=bool), bg)
        assert np.array_equal(out, crop)

    def test_empty_mask_keeps_background(self):
        crop, bg = _rand_image(0), _rand_image(1)
        out = composite_background(crop, np.zeros((32, 32), dtype=bool), bg)
        assert np.array_equal(out, bg)

    def test_half_plane_pixelwise(self):
        crop, bg = _rand_image(2), _rand_image(3)
        mask = np.zeros((32, 32), dtype=bool)
        mask[:, :16] = True
        out = composite_background(crop, mask, bg)
        for i in range(32):
            for j in range(32):
                expect = crop[i, j] if j < 16 else bg[i, j]
                assert np.array_equal(out[i, j], expect)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            composite_background(_rand_image(0), np.ones((16, 16)), _rand_image(1))


class TestSquareOcclusion:
    def test_fraction_zero_unchanged(self):
        img = _rand_image(0)
        out = square_occlusion(img, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, img)

    def test_fraction_one_covers_min_dimension(self):
        img = np.full((32, 48, 3), 0.3)
        out = square_occlusion(img, 1.0, np.random.default_rng(1))
        changed = (out != 0.3).any(axis=2)
        assert changed.sum() == 32 * 32

    def test_exact_pixel_count(self):
        img = np.full((64, 64, 3), 0.5)
        out = square_occlusion(img, 0.4, np.random.default_rng(2))
        changed = (out != 0.5).any(axis=2)
        assert changed.sum() == int(math.floor(0.4 * 64)) ** 2

    def test_uniform_fill(self):
        img = _rand_image(4, 64)
        out = square_occlusion(img, 0.5, np.random.default_rng(3))
        changed = (out != img).any(axis=2)
        values = out[changed]
        assert np.unique(values).size == 1


class TestOperators:
    def test_invert_constant(self):
        img = np.full((16, 16, 3), 0.25)
        out = apply_operator("invert", img, np.random.default_rng(0), AugmentationConfig())
        assert np.allclose(out, 0.75)

    def test_multiply_identity_range(self):
        cfg = AugmentationConfig(multiply_range=(1.0, 1.0))
        img = _rand_image(1)
        out = apply_operator("multiply", img, np.random.default_rng(0), cfg)
        assert np.allclose(out, img)

    def test_contrast_identity_range(self):
        cfg = AugmentationConfig(contrast_range=(1.0, 1.0))
        img = _rand_image(2)
        out = apply_operator("contrast_normalization", img, np.random.default_rng(0), cfg)
        assert np.allclose(out, img)

    def test_blur_impulse_is_separable_kernel(self):
        # independent oracle: 1D gaussian samples, normalized, outer product
        sigma = 1.3
        radius = max(1, int(math.ceil(3.0 * sigma)))
        xs = np.arange(-radius, radius + 1, dtype=np.float64)
        k1 = np.exp(-(xs**2) / (2 * sigma**2))
        k1 /= k1.sum()
        oracle = np.outer(k1, k1)

        img = np.zeros((33, 33))
        img[16, 16] = 1.0
        out = blur_with_sigma(img, sigma)
        patch = out[16 - radius : 16 + radius + 1, 16 - radius : 16 + radius + 1]
        assert np.abs(patch - oracle).max() < 1e-12
        assert out.sum() == pytest.approx(1.0, abs=1e-6)

    def test_blur_constant_preserved(self):
        # reflect padding keeps a constant image constant
        img = np.full((20, 20, 3), 0.6)
        out = blur_with_sigma(img, 2.0)
        assert np.abs(out - 0.6).max() < 1e-12

    def test_unknown_operator(self):
        with pytest.raises(ValueError):
            apply_operator("solarize", _rand_image(0), np.random.default_rng(0), AugmentationConfig())

    @pytest.mark.parametrize("name", OPERATOR_ORDER)
    def test_shape_and_range_preserved(self, name):
        img = _rand_image(7)
        out = apply_operator(name, img, np.random.default_rng(11), AugmentationConfig())
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestFAug:
    def test_all_disabled_is_identity(self):
        img = _rand_image(0)
        out = f_aug(img, identity_config(), np.random.default_rng(0))
        assert np.array_equal(out, img)

    def test_deterministic_per_seed(self):
        cfg = AugmentationConfig(gaussian_blur=True, contrast_normalization=True,
                                 square_occlusion_fraction=0.6)
        img = _rand_image(1, 64)
        a = f_aug(img, cfg, np.random.default_rng(9))
        b = f_aug(img, cfg, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_box_style_config_occludes(self):
        # occlusion always on: the output square of side 0.6*64 is uniform
        cfg = AugmentationConfig(
            square_occlusion_fraction=0.6,
            probabilities={**{k: 0.0 for k in OPERATOR_ORDER}, "square_occlusion": 1.0},
        )
        img = _rand_image(2, 64)
        out = f_aug(img, cfg, np.random.default_rng(3))
        assert not np.array_equal(out, img)
        changed = (out != img).any(axis=2)
        side = int(0.6 * 64)
        assert changed.sum() == side * side
        assert np.unique(out[changed]).size == 1

    @given(seeds)
    @settings(max_examples=20, deadline=None)
    def test_range_and_shape_preserved(self, seed):
        cfg = AugmentationConfig(
            perspective_transform=True, gaussian_blur=True, contrast_normalization=True,
            probabilities={**{k: 1.0 for k in OPERATOR_ORDER}, "square_occlusion": 1.0},
        )
        img = _rand_image(seed)
        out = f_aug(img, cfg, np.random.default_rng(seed + 1))
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_different_seeds_differ(self):
        cfg = AugmentationConfig()
        img = _rand_image(5, 64)
        outs = [f_aug(img, cfg, np.random.default_rng(s)) for s in range(20)]
        distinct = sum(not np.array_equal(outs[0], o) for o in outs[1:])
        assert distinct >= 18  # ~P(identical) is negligible with stochastic ops


class TestConfigJson:
    def test_round_trip(self):
        cfg = AugmentationConfig(gaussian_blur=True, square_occlusion_fraction=0.6)
        back = AugmentationConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            AugmentationConfig(square_occlusion_fraction=1.5)
        with pytest.raises(ValueError):
            AugmentationConfig(probabilities={"invert": 2.0})
