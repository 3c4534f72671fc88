"""Raster kernels: resize, flip, paste, crop, blending.

Resizing is bilinear with half-pixel centers (source coordinate of output
pixel x is (x + 0.5) * src/dst - 0.5). Blending uses exact integer
arithmetic with round-half-up so replay is bit-identical.
"""

from __future__ import annotations

import numpy as np
import cv2

from .errors import DimensionMismatchError


def resize_bilinear(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resize an (H, W, 3) uint8 raster to out_h x out_w.

    Same-size inputs are returned as an identical copy. Output matches the
    exact float bilinear result to within one gray level (fixed-point
    evaluation).
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    h, w = pixels.shape[:2]
    if (out_h, out_w) == (h, w):
        return pixels.copy()
    return cv2.resize(pixels, (out_w, out_h), interpolation=cv2.INTER_LINEAR)


def flip_horizontal(pixels: np.ndarray) -> np.ndarray:
    """Mirror columns (left-right flip)."""
    return np.ascontiguousarray(pixels[:, ::-1])


def paste(canvas: np.ndarray, patch: np.ndarray, x0: int, y0: int) -> None:
    """Overwrite canvas pixels with the patch at integer offset (x0, y0).

    The patch must fit entirely inside the canvas.
    """
    ph, pw = patch.shape[:2]
    ch, cw = canvas.shape[:2]
    if x0 < 0 or y0 < 0 or x0 + pw > cw or y0 + ph > ch:
        raise ValueError(
            f"patch {pw}x{ph} at ({x0}, {y0}) does not fit canvas {cw}x{ch}"
        )
    canvas[y0:y0 + ph, x0:x0 + pw] = patch


def average_blend(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-channel 0.5/0.5 blend with round-half-up, exact in integer math."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"blend shapes differ: {a.shape} vs {b.shape}")
    return ((a.astype(np.uint16) + b.astype(np.uint16) + 1) >> 1).astype(np.uint8)


def crop(pixels: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """Copy the half-open integer window [x0, x1) x [y0, y1)."""
    h, w = pixels.shape[:2]
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"crop window ({x0},{y0},{x1},{y1}) outside raster {w}x{h}")
    return pixels[y0:y1, x0:x1].copy()


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical rasters."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)
