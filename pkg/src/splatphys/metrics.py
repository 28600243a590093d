"""Image-comparison objectives and evaluation metrics.

SSIM / MS-SSIM (canonical constants: 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03; MS-SSIM exponents 0.0448/0.2856/0.3001/0.2363/0.1333),
Sobel edge error, and mask-restricted PSNR/SSIM.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Mask

MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 3")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1, k2 must be positive")


def to_grayscale(img):
    """Luma conversion for RGB input; grayscale passed through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ LUMA
    return img


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _local_moments(a, b, params: SsimParams):
    """Gaussian-weighted local means/variances/covariance on valid windows."""
    win = _gaussian_window(params.window_size, params.gaussian_sigma)
    r = params.window_size // 2

    def smooth(x):
        y = ndimage.correlate1d(x, win, axis=0, mode="constant")
        y = ndimage.correlate1d(y, win, axis=1, mode="constant")
        return y[r:-r, r:-r] if r else y

    mu_a = smooth(a)
    mu_b = smooth(b)
    saa = smooth(a * a) - mu_a * mu_a
    sbb = smooth(b * b) - mu_b * mu_b
    sab = smooth(a * b) - mu_a * mu_b
    return mu_a, mu_b, saa, sbb, sab


def ssim_map(a, b, params: SsimParams = SsimParams()):
    """Per-window SSIM values ('valid' window placement)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    a = to_grayscale(a)
    b = to_grayscale(b)
    if min(a.shape) < params.window_size:
        raise ValueError("images smaller than the SSIM window")
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    mu_a, mu_b, saa, sbb, sab = _local_moments(a, b, params)
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)
            / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)))


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over all valid window positions."""
    return float(np.mean(ssim_map(a, b, params)))


def _contrast_structure(a, b, params: SsimParams) -> float:
    c2 = (params.k2 * params.dynamic_range) ** 2
    _, _, saa, sbb, sab = _local_moments(a, b, params)
    return float(np.mean((2 * sab + c2) / (saa + sbb + c2)))


def _downsample2(x):
    h, w = x.shape
    x = x[: h - h % 2, : w - w % 2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


@dataclass(frozen=True)
class MsSsimResult:
    value: float
    fell_back: bool  # True when the image was too small and plain SSIM was used

    def __float__(self):
        return self.value


def ms_ssim(a, b, params: SsimParams = SsimParams()) -> MsSsimResult:
    """5-level multi-scale SSIM; 2x2 mean pooling between levels.

    Levels 1-4 contribute contrast*structure, level 5 the full SSIM, combined
    as a product with the standard exponents. Images too small for 5 dyadic
    downscales fall back to plain SSIM, flagged in the result.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    a = to_grayscale(a)
    b = to_grayscale(b)
    levels = len(MS_SSIM_WEIGHTS)
    if min(a.shape) < params.window_size * 2 ** (levels - 1):
        return MsSsimResult(ssim(a, b, params), fell_back=True)
    value = 1.0
    for level in range(levels):
        if level == levels - 1:
            term = ssim(a, b, params)
        else:
            term = _contrast_structure(a, b, params)
            a = _downsample2(a)
            b = _downsample2(b)
        # MS-SSIM is undefined for negative factors; clamp like common impls
        value *= max(term, 0.0) ** MS_SSIM_WEIGHTS[level]
    return MsSsimResult(float(value), fell_back=False)


def edge_error(rendered, truth, mask: Mask) -> float:
    """Mean |Sobel_x(r) - Sobel_x(t)| + |Sobel_y(r) - Sobel_y(t)| over the mask.

    Standard 3x3 Sobel kernels, replicate padding at the borders.
    """
    r = to_grayscale(rendered)
    t = to_grayscale(truth)
    if r.shape != t.shape or r.shape != mask.values.shape:
        raise ValueError("edge_error inputs have mismatched shapes")
    if not mask.values.any():
        raise ValueError("edge_error undefined on an empty mask")
    gx_r = ndimage.sobel(r, axis=1, mode="nearest")
    gx_t = ndimage.sobel(t, axis=1, mode="nearest")
    gy_r = ndimage.sobel(r, axis=0, mode="nearest")
    gy_t = ndimage.sobel(t, axis=0, mode="nearest")
    err = np.abs(gx_r - gx_t) + np.abs(gy_r - gy_t)
    return float(err[mask.values].mean())


def masked_psnr_ssim(rendered, truth, mask: Mask,
                     params: SsimParams = SsimParams()):
    """PSNR over masked pixels and SSIM averaged over mask-centered windows.

    Returns (psnr, ssim); psnr is math.inf when the masked MSE is zero.
    """
    r = np.asarray(rendered, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if r.shape != t.shape or r.shape[:2] != mask.values.shape:
        raise ValueError("masked_psnr_ssim inputs have mismatched shapes")
    if not mask.values.any():
        raise ValueError("masked_psnr_ssim undefined on an empty mask")
    mse = float(np.mean((r[mask.values] - t[mask.values]) ** 2))
    if mse == 0.0:
        psnr = float("inf")
    else:
        psnr = 10.0 * np.log10(params.dynamic_range ** 2 / mse)

    # SSIM on the mask's bounding box, averaged over windows whose center
    # pixel is masked.
    rows = np.any(mask.values, axis=1).nonzero()[0]
    cols = np.any(mask.values, axis=0).nonzero()[0]
    pad = params.window_size // 2
    r0 = max(rows[0] - pad, 0)
    r1 = min(rows[-1] + pad + 1, mask.values.shape[0])
    c0 = max(cols[0] - pad, 0)
    c1 = min(cols[-1] + pad + 1, mask.values.shape[1])
    gray_r = to_grayscale(r)[r0:r1, c0:c1]
    gray_t = to_grayscale(t)[r0:r1, c0:c1]
    sub_mask = mask.values[r0:r1, c0:c1]
    if min(gray_r.shape) < params.window_size:
        # bbox smaller than a window: fall back to the single global window
        wt = np.ones(1)
        mu_r, mu_t = gray_r.mean(), gray_t.mean()
        c1_, c2_ = (params.k1 * params.dynamic_range) ** 2, (params.k2 * params.dynamic_range) ** 2
        var_r, var_t = gray_r.var(), gray_t.var()
        cov = np.mean((gray_r - mu_r) * (gray_t - mu_t))
        s = ((2 * mu_r * mu_t + c1_) * (2 * cov + c2_)
             / ((mu_r ** 2 + mu_t ** 2 + c1_) * (var_r + var_t + c2_)))
        return psnr, float(s)
    smap = ssim_map(gray_r, gray_t, params)
    centers = sub_mask[pad:pad + smap.shape[0], pad:pad + smap.shape[1]]
    if not centers.any():
        return psnr, float(np.mean(smap))
    return psnr, float(np.mean(smap[centers]))
