import numpy as np
import pytest

from fdftnet.core import Tensor
from fdftnet.models.schemas import CutoutConfig
from fdftnet.services.augment import augment_batch, cutout


class _ScriptedRng:
    """Hands out scripted integers in order, ignoring the requested bounds."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high=None):
        return self.values.pop(0)


class TestCutout:
    def test_disabled_is_identity(self, rng):
        image = rng.uniform(size=(3, 16, 16)).astype(np.float32)
        out = cutout(image, CutoutConfig(enabled=False), rng)
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_mask_is_shared_across_channels(self, rng):
        image = np.ones((3, 32, 32), dtype=np.float32)
        out = cutout(image, CutoutConfig(alpha=3, beta=1), rng)
        zeroed = out == 0
        np.testing.assert_array_equal(zeroed[0], zeroed[1])
        np.testing.assert_array_equal(zeroed[0], zeroed[2])
        assert 0 < zeroed[0].sum() <= 3 * 16

    def test_mask_placed_at_drawn_corner(self):
        image = np.ones((3, 16, 16), dtype=np.float32)
        out = cutout(image, CutoutConfig(alpha=1, beta=1), _ScriptedRng([1, 0, 0]))
        np.testing.assert_array_equal(out[:, :4, :4], 0.0)
        assert (out == 0).sum() == 3 * 16

    def test_overhanging_mask_is_clipped(self):
        image = np.ones((1, 32, 32), dtype=np.float32)
        # side 8 with its corner at (-5, 30) keeps rows 0..2 and columns 30..31
        out = cutout(image, CutoutConfig(alpha=1, beta=2), _ScriptedRng([2, -5, 30]))
        assert (out == 0).sum() == 6
        np.testing.assert_array_equal(out[0, :3, 30:], 0.0)

    def test_tensor_in_tensor_out(self, rng):
        out = cutout(Tensor(np.ones((3, 8, 8))), CutoutConfig(beta=1), rng)
        assert isinstance(out, Tensor)

    def test_zeroed_fraction_matches_expectation(self):
        cfg = CutoutConfig(alpha=3, beta=5)
        size = 32
        sides = cfg.base_mask * np.arange(1, cfg.beta + 1)
        q = np.mean((sides / (size + sides - 1)) ** 2)
        expected = 1 - (1 - q) ** cfg.alpha
        out = augment_batch(np.ones((4000, 1, size, size)), cfg, np.random.default_rng(7))
        assert (out == 0).mean() == pytest.approx(expected, abs=0.01)

    def test_ten_thousand_draws_at_full_resolution(self):
        cfg = CutoutConfig(alpha=3, beta=5)
        size = 64
        sides = cfg.base_mask * np.arange(1, cfg.beta + 1)
        expected = 1 - (1 - np.mean((sides / (size + sides - 1)) ** 2)) ** cfg.alpha
        rng = np.random.default_rng(11)
        image = np.ones((1, size, size), dtype=np.float32)
        zeroed = np.zeros((size, size))
        for _ in range(10_000):
            zeroed += cutout(image, cfg, rng)[0] == 0
        zeroed /= 10_000
        assert zeroed.mean() == pytest.approx(expected, abs=0.01)
        # every pixel, corners included, is equally likely to be masked
        assert np.abs(zeroed - expected).max() < 0.05


class TestAugmentBatch:
    def test_images_get_independent_masks(self, rng):
        out = augment_batch(np.ones((8, 3, 32, 32)), CutoutConfig(), rng)
        masks = {(out[i, 0] == 0).tobytes() for i in range(8)}
        assert len(masks) > 1

    def test_same_stream_same_masks(self):
        batch = np.ones((4, 3, 32, 32))
        a = augment_batch(batch, CutoutConfig(), np.random.default_rng(3))
        b = augment_batch(batch, CutoutConfig(), np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_input_left_untouched(self, rng):
        batch = np.ones((2, 3, 16, 16))
        augment_batch(batch, CutoutConfig(), rng)
        np.testing.assert_array_equal(batch, 1.0)

    def test_presets(self):
        assert CutoutConfig.preset("deepfake").beta == 5
        assert CutoutConfig.preset("gan").beta == 10
        with pytest.raises(ValueError):
            CutoutConfig.preset("faces")
