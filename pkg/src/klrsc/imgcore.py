"""Pixel-level primitives.

Images are 2-D ``float64`` arrays indexed ``[row, col]`` with intensities
nominally in ``[0, 1]``.  Nothing here clamps; :func:`to_uint8` is the only
place values are squashed back into range.

Resampling and blurring are separable linear operators.  Both are exposed
as explicit per-axis matrices (:func:`resize_matrix`, :func:`blur_matrix`)
so that callers needing exact adjoints can take transposes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

# ITU-R BT.601, full range
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168735891647856, -0.331264108352144, 0.5],
        [0.5, -0.418687589158345, -0.081312410841655],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


@dataclass(frozen=True)
class Patch:
    """A square block cut out of an image at ``origin`` (row, col)."""

    origin: tuple[int, int]
    pixels: np.ndarray

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def scaled_shape(shape: tuple[int, int], factor: float) -> tuple[int, int]:
    return (round_half_away(shape[0] * factor), round_half_away(shape[1] * factor))


# ---------------------------------------------------------------------------
# colour
# ---------------------------------------------------------------------------

def rgb_to_luma_chroma(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Split an 8-bit image into luma in [0, 1] and zero-centred (Cb, Cr).

    A 2-D (grayscale) input is returned as luma with ``None`` chroma.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.float64) / 255.0, None
    if rgb.ndim != 3 or rgb.shape[2] not in (3, 4):
        raise ValueError(f"expected HxW or HxWx3 raster, got shape {rgb.shape}")
    x = rgb[..., :3].astype(np.float64) / 255.0
    ycc = x @ _RGB_TO_YCC.T
    # integer weights keep luma exact at the extremes (white -> 1.0)
    luma = (rgb[..., :3].astype(np.int64) @ np.array([299, 587, 114])) / 255000.0
    return luma, ycc[..., 1:]


def luma_chroma_to_rgb(luma: np.ndarray, chroma: np.ndarray | None) -> np.ndarray:
    """Inverse of :func:`rgb_to_luma_chroma`; returns a clamped uint8 raster."""
    if chroma is None:
        return to_uint8(luma)
    ycc = np.concatenate([luma[..., None], chroma], axis=2)
    return to_uint8(ycc @ _YCC_TO_RGB.T)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    """Read PNG / PGM / PPM (or anything Pillow opens) as a uint8 array."""
    with PILImage.open(path) as im:
        if im.mode in ("L", "LA", "I;16", "I", "F", "1"):
            return np.asarray(im.convert("L"))
        return np.asarray(im.convert("RGB"))


def write_image(path: str | Path, raster: np.ndarray) -> None:
    """Write a uint8 raster (HxW or HxWx3).  Format follows the suffix."""
    PILImage.fromarray(np.asarray(raster, dtype=np.uint8)).save(path)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def mirror_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Fold integer indices into ``[0, n)`` with half-sample symmetric padding."""
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


@lru_cache(maxsize=256)
def _resize_matrix_cached(n_in: int, n_out: int, a: float, antialias: bool) -> np.ndarray:
    scale = n_out / n_in
    width = 4.0
    if antialias and scale < 1.0:
        width /= scale
    # centre of output pixel i (0-based) in input coordinates
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    if antialias and scale < 1.0:
        w = scale * cubic_kernel(scale * dist, a)
    else:
        w = cubic_kernel(dist, a)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, mirror_index(idx, n_in).ravel()), w.ravel())
    mat.setflags(write=False)
    return mat


def resize_matrix(n_in: int, n_out: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """``n_out x n_in`` matrix of one separable bicubic resampling pass.

    Rows sum to one.  When shrinking, the kernel is stretched by the inverse
    scale (antialiasing), matching the usual ``imresize`` convention.
    """
    return _resize_matrix_cached(int(n_in), int(n_out), float(a), bool(antialias))


def bicubic_resize(img: np.ndarray, target_w: int, target_h: int, a: float = -0.5) -> np.ndarray:
    if target_w < 4 or target_h < 4:
        raise ValueError(f"target {target_w}x{target_h} is below the 4x4 bicubic support")
    h, w = img.shape
    if (h, w) == (target_h, target_w):
        return np.array(img, dtype=np.float64)
    rh = resize_matrix(h, target_h, a)
    rw = resize_matrix(w, target_w, a)
    return rh @ img @ rw.T


def resize_to(img: np.ndarray, shape: tuple[int, int], a: float = -0.5) -> np.ndarray:
    return bicubic_resize(img, shape[1], shape[0], a)


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------

def gaussian_kernel_1d(variance: float, kernel_size: int) -> np.ndarray:
    if variance <= 0:
        raise ValueError(f"blur variance must be positive, got {variance}")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kernel_size}")
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * variance))
    return g / g.sum()


def gaussian_kernel_2d(variance: float, kernel_size: int) -> np.ndarray:
    g = gaussian_kernel_1d(variance, kernel_size)
    return np.outer(g, g)


@lru_cache(maxsize=256)
def _blur_matrix_cached(n: int, variance: float, kernel_size: int) -> np.ndarray:
    g = gaussian_kernel_1d(variance, kernel_size)
    r = kernel_size // 2
    idx = np.arange(n)[:, None] + np.arange(-r, r + 1)[None, :]
    mat = np.zeros((n, n))
    rows = np.repeat(np.arange(n), kernel_size)
    np.add.at(mat, (rows, mirror_index(idx, n).ravel()), np.tile(g, n))
    mat.setflags(write=False)
    return mat


def blur_matrix(n: int, variance: float, kernel_size: int = 7) -> np.ndarray:
    """``n x n`` matrix of a 1-D Gaussian blur with symmetric borders."""
    return _blur_matrix_cached(int(n), float(variance), int(kernel_size))


def gaussian_blur(img: np.ndarray, variance: float, kernel_size: int = 7) -> np.ndarray:
    """Separable normalised Gaussian blur, symmetric (mirror) boundary."""
    h, w = img.shape
    return blur_matrix(h, variance, kernel_size) @ img @ blur_matrix(w, variance, kernel_size).T


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def patch_origins(n: int, size: int, overlap: int) -> np.ndarray:
    """Patch start offsets along one axis; the last one is clamped to ``n - size``."""
    if not 0 <= overlap < size:
        raise ValueError(f"need 0 <= overlap < size, got overlap={overlap}, size={size}")
    if n < size:
        raise ValueError(f"axis of length {n} cannot hold a {size}-pixel patch")
    stride = size - overlap
    origins = list(range(0, n - size + 1, stride))
    if origins[-1] != n - size:
        origins.append(n - size)
    return np.asarray(origins, dtype=np.int64)


def patch_grid(shape: tuple[int, int], size: int, overlap: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column origins of every patch, row-major order."""
    rows = patch_origins(shape[0], size, overlap)
    cols = patch_origins(shape[1], size, overlap)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.ravel(), cc.ravel()


def patch_stack(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, size: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.ascontiguousarray(windows[rows, cols])


def extract_patches(img: np.ndarray, size: int, overlap: int) -> list[Patch]:
    rows, cols = patch_grid(img.shape, size, overlap)
    stack = patch_stack(img, rows, cols, size)
    return [Patch((int(r), int(c)), p) for r, c, p in zip(rows, cols, stack)]


def merge_patch_stack(
    stack: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]
) -> np.ndarray:
    """Average overlapping patches into a canvas.

    Contributions to each pixel are summed in sorted order relative to the
    pixel's smallest contribution, so the result does not depend on patch
    order and reproduces the input exactly when all contributions agree.
    """
    h, w = shape
    dr, dc = np.meshgrid(np.arange(stack.shape[1]), np.arange(stack.shape[2]), indexing="ij")
    pix = ((rows[:, None, None] + dr) * w + (cols[:, None, None] + dc)).ravel()
    vals = np.asarray(stack, dtype=np.float64).ravel()
    if pix.size and (pix.min() < 0 or pix.max() >= h * w):
        raise ValueError("patch falls outside the canvas")
    order = np.lexsort((vals, pix))
    pix = pix[order]
    vals = vals[order]
    starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]]) if pix.size else np.array([], int)
    covered = pix[starts]
    if covered.size != h * w:
        missing = np.setdiff1d(np.arange(h * w), covered)[0]
        raise ValueError(f"pixel ({missing // w}, {missing % w}) is not covered by any patch")
    counts = np.diff(np.r_[starts, pix.size])
    base = vals[starts]
    dev = np.add.reduceat(vals - np.repeat(base, counts), starts)
    return (base + dev / counts).reshape(h, w)


def merge_patches(patches: Sequence[Patch], canvas_w: int, canvas_h: int) -> np.ndarray:
    if not patches:
        raise ValueError("no patches to merge")
    rows = np.array([p.origin[0] for p in patches], dtype=np.int64)
    cols = np.array([p.origin[1] for p in patches], dtype=np.int64)
    stack = np.stack([p.pixels for p in patches])
    return merge_patch_stack(stack, rows, cols, (canvas_h, canvas_w))
