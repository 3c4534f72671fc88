import numpy as np
import pytest

from gridsynth.errors import DimensionMismatchError
from gridsynth.imageops import (
    average_blend,
    crop,
    flip_horizontal,
    paste,
    psnr,
    resize_bilinear,
)
from gridsynth.seeding import rng_for


def exact_bilinear(src, out_h, out_w):
    """Float64 reference with half-pixel centers and round-half-up."""
    h, w = src.shape[:2]
    f = src.astype(np.float64)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    y0 = ys.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    wy = (ys - y0)[:, None, None]
    tmp = f[y0] * (1 - wy) + f[y1] * wy
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    x0 = xs.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    wx = (xs - x0)[None, :, None]
    return np.floor(tmp[:, x0] * (1 - wx) + tmp[:, x1] * wx + 0.5).astype(np.uint8)


class TestResize:
    def test_identity_size_is_exact_copy(self):
        src = rng_for(1).integers(0, 256, size=(13, 9, 3), dtype=np.uint8)
        out = resize_bilinear(src, 9, 13)
        assert np.array_equal(out, src)
        out[0, 0, 0] ^= 255  # returned copy, not the input
        assert not np.array_equal(out, src)

    @pytest.mark.parametrize("shape,target", [
        ((40, 60), (80, 80)),
        ((64, 64), (160, 160)),
        ((100, 30), (32, 48)),
        ((7, 5), (20, 11)),
    ])
    def test_matches_exact_float_reference_within_one(self, shape, target):
        src = rng_for(hash(shape) & 0xFFFF).integers(0, 256, size=(*shape, 3), dtype=np.uint8)
        got = resize_bilinear(src, target[1], target[0]).astype(np.int32)
        want = exact_bilinear(src, target[0], target[1]).astype(np.int32)
        assert np.abs(got - want).max() <= 1

    def test_constant_image_stays_constant(self):
        src = np.full((17, 23, 3), 77, dtype=np.uint8)
        out = resize_bilinear(src, 160, 80)
        assert (out == 77).all()

    def test_rejects_empty_target(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((4, 4, 3), np.uint8), 0, 4)


class TestFlip:
    def test_reverses_columns(self):
        src = np.zeros((1, 2, 3), dtype=np.uint8)
        src[0, 0] = 10
        src[0, 1] = 250
        out = flip_horizontal(src)
        assert out[0, 0, 0] == 250 and out[0, 1, 0] == 10

    def test_involution(self):
        src = rng_for(2).integers(0, 256, size=(6, 11, 3), dtype=np.uint8)
        assert np.array_equal(flip_horizontal(flip_horizontal(src)), src)


class TestBlend:
    def test_round_half_up(self):
        a = np.zeros((2, 2, 3), dtype=np.uint8)
        b = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert (average_blend(a, b) == 128).all()

    def test_self_blend_identity(self):
        a = rng_for(3).integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
        assert np.array_equal(average_blend(a, a), a)

    def test_exact_values(self):
        a = np.array([[[10, 11, 12]]], dtype=np.uint8)
        b = np.array([[[21, 20, 13]]], dtype=np.uint8)
        # (10+21+1)//2=16, (11+20+1)//2=16, (12+13+1)//2=13
        assert average_blend(a, b).tolist() == [[[16, 16, 13]]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            average_blend(np.zeros((2, 2, 3), np.uint8), np.zeros((2, 3, 3), np.uint8))


class TestPasteCrop:
    def test_paste_overwrites_window(self):
        canvas = np.zeros((8, 8, 3), dtype=np.uint8)
        patch = np.full((3, 2, 3), 9, dtype=np.uint8)
        paste(canvas, patch, 4, 2)
        assert (canvas[2:5, 4:6] == 9).all()
        assert canvas.sum() == 9 * 3 * 2 * 3

    def test_paste_out_of_bounds(self):
        canvas = np.zeros((8, 8, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            paste(canvas, np.zeros((4, 4, 3), np.uint8), 6, 6)

    def test_crop_window(self):
        src = rng_for(4).integers(0, 256, size=(10, 10, 3), dtype=np.uint8)
        out = crop(src, 2, 3, 7, 9)
        assert np.array_equal(out, src[3:9, 2:7])

    def test_crop_invalid_window(self):
        with pytest.raises(ValueError):
            crop(np.zeros((4, 4, 3), np.uint8), 2, 2, 2, 3)


class TestPsnr:
    def test_identical_is_infinite(self):
        a = rng_for(5).integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        assert psnr(a, a.copy()) == float("inf")

    def test_small_noise_is_high(self):
        a = rng_for(6).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        b = a.copy()
        b[0, 0, 0] = np.uint8(int(b[0, 0, 0]) ^ 4)
        assert psnr(a, b) > 30.0
