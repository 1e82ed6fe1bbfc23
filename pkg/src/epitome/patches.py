"""Patch extraction from images and overlap-averaged reassembly."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import GeometryError, PatchShape


def image_patches(img, shape: PatchShape, stride: int = 1) -> np.ndarray:
    """All patches whose top-left corner lies on the stride grid, as columns.

    Columns follow the row-major order of the corners; each column holds
    the patch pixels row-major.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if img.shape[0] < shape.height or img.shape[1] < shape.width:
        raise GeometryError(f"image {img.shape} smaller than patch {shape.height}x{shape.width}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    win = sliding_window_view(img, (shape.height, shape.width))[::stride, ::stride]
    return np.ascontiguousarray(win.reshape(-1, shape.m).T)


def n_positions(img_shape, shape: PatchShape) -> int:
    return (img_shape[0] - shape.height + 1) * (img_shape[1] - shape.width + 1)


def coverage(img_shape, shape: PatchShape) -> np.ndarray:
    """Number of stride-1 patches covering each pixel."""
    H, W = img_shape
    ny, nx = H - shape.height + 1, W - shape.width + 1
    cov = np.zeros((H, W))
    for dy in range(shape.height):
        for dx in range(shape.width):
            cov[dy:dy + ny, dx:dx + nx] += 1.0
    return cov


def reconstruct_average(estimates, img_shape, shape: PatchShape) -> np.ndarray:
    """Average overlapping stride-1 patch estimates back into an image.

    The accumulation order is fixed (patch offset major), so the result
    is reproducible bit for bit.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    H, W = img_shape
    ny, nx = H - shape.height + 1, W - shape.width + 1
    if ny < 1 or nx < 1:
        raise GeometryError(f"image {img_shape} smaller than patch")
    if estimates.shape != (shape.m, ny * nx):
        raise ValueError(f"expected {shape.m} x {ny * nx} estimates, got {estimates.shape}")
    acc = np.zeros((H, W))
    blocks = estimates.reshape(shape.height, shape.width, ny, nx)
    for dy in range(shape.height):
        for dx in range(shape.width):
            acc[dy:dy + ny, dx:dx + nx] += blocks[dy, dx]
    return acc / coverage(img_shape, shape)
