"""Image preparation: resize, normalization, Gaussian smoothing, histogram
equalization, multi-scale generation, and grid-cell assignment.

Images are numpy arrays of shape (H, W, 3): uint8 before normalization,
float64 after. Normalized box annotations are untouched by every pixel
operation here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import convolve1d

from .errors import ValidationError
from .model import BoundingBox

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# ITU-R BT.601 luma/chroma weights
_Y_W = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PreprocConfig:
    target_size: int = 640
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    smooth_kernel: int = 5
    smooth_sigma: float = 1.0
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.target_size <= 0:
            raise ValidationError("target_size must be > 0")
        if any(s <= 0 for s in self.std):
            raise ValidationError("std components must be > 0")
        if self.smooth_kernel < 3 or self.smooth_kernel % 2 == 0:
            raise ValidationError("smooth_kernel must be odd and >= 3")
        if self.smooth_sigma <= 0:
            raise ValidationError("smooth_sigma must be > 0")
        if any(s <= 0 for s in self.scales):
            raise ValidationError("scales must be > 0")


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) image, got {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValidationError("zero-dimension image")


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(img.astype(np.uint8))).save(
        path, format="PNG")


def resize(img: np.ndarray, target_size: int = 640) -> np.ndarray:
    """Bilinear resample to a target_size square; aspect not preserved, so
    normalized annotations stay valid without adjustment."""
    _check_image(img)
    if target_size <= 0:
        raise ValidationError("target_size must be > 0")
    if img.shape[0] == target_size and img.shape[1] == target_size:
        return img.copy()
    pil = Image.fromarray(img.astype(np.uint8))
    return np.asarray(pil.resize((target_size, target_size),
                                 Image.Resampling.BILINEAR))


def normalize(img: np.ndarray, mean=IMAGENET_MEAN,
              std=IMAGENET_STD) -> np.ndarray:
    """Per-channel (v/255 - mean) / std on an 8-bit image."""
    _check_image(img)
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ValidationError("std components must be > 0")
    return (img.astype(np.float64) / 255.0 - np.asarray(mean)) / std


def denormalize(img: np.ndarray, mean=IMAGENET_MEAN,
                std=IMAGENET_STD) -> np.ndarray:
    """Inverse of normalize, back to uint8."""
    out = (img * np.asarray(std) + np.asarray(mean)) * 255.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, kernel: int = 5,
                    sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders."""
    _check_image(img)
    if kernel < 3 or kernel % 2 == 0:
        raise ValidationError("kernel must be odd and >= 3")
    if sigma <= 0:
        raise ValidationError("sigma must be > 0")
    k = _gaussian_kernel(kernel, sigma)
    out = img.astype(np.float64)
    out = convolve1d(out, k, axis=0, mode="nearest")
    out = convolve1d(out, k, axis=1, mode="nearest")
    if np.issubdtype(img.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def rgb_to_ycc(img: np.ndarray) -> np.ndarray:
    """Float BT.601 luma/chroma decomposition of an 8-bit RGB image."""
    f = img.astype(np.float64)
    y = f @ _Y_W
    cb = (f[..., 2] - y) * 0.564 + 128.0
    cr = (f[..., 0] - y) * 0.713 + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycc_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + 1.403 * (cr - 128.0)
    b = y + 1.773 * (cb - 128.0)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    out = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def hist_equalize(img: np.ndarray) -> np.ndarray:
    """Histogram-equalize the luma channel; chroma is left untouched."""
    _check_image(img)
    ycc = rgb_to_ycc(img)
    y = np.clip(np.rint(ycc[..., 0]), 0, 255).astype(np.uint8)
    hist = np.bincount(y.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[cdf > 0]
    if nonzero.size == 0:
        return img.copy()
    cdf_min = nonzero[0]
    total = y.size
    if total == cdf_min:  # single luma level everywhere
        return img.copy()
    lut = np.rint((cdf - cdf_min) / (total - cdf_min) * 255.0)
    ycc_out = ycc.copy()
    ycc_out[..., 0] = lut[y]
    return ycc_to_rgb(ycc_out)


def multiscale(img: np.ndarray, scales) -> list[np.ndarray]:
    """Aspect-preserving rescaled copies, one per scale factor."""
    _check_image(img)
    out = []
    h, w = img.shape[:2]
    for s in scales:
        if s <= 0:
            raise ValidationError(f"scale must be > 0, got {s}")
        nw, nh = round(s * w), round(s * h)
        if nw == 0 or nh == 0:
            raise ValidationError(f"scale {s} collapses {w}x{h} to zero")
        if (nw, nh) == (w, h):
            out.append(img.copy())
            continue
        pil = Image.fromarray(img.astype(np.uint8))
        out.append(np.asarray(pil.resize((nw, nh),
                                         Image.Resampling.BILINEAR)))
    return out


def grid_assign(box: BoundingBox, grid_size: int,
                canvas: int = 640) -> tuple[int, int]:
    """(row, col) of the cell containing the box center.

    grid_size is the cell stride in pixels; canvas must divide evenly.
    """
    if grid_size <= 0 or canvas % grid_size != 0:
        raise ValidationError(
            f"canvas {canvas} not divisible by grid size {grid_size}")
    cells = canvas // grid_size
    col = min(int(box.cx * cells), cells - 1)
    row = min(int(box.cy * cells), cells - 1)
    return row, col


def preprocess(img: np.ndarray,
               cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Default chain: smooth, equalize, resize, normalize."""
    out = gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)
    out = hist_equalize(out)
    out = resize(out, cfg.target_size)
    return normalize(out, cfg.mean, cfg.std)
