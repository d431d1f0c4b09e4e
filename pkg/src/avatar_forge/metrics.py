"""Image and geometry metrics: PSNR, SSIM, normal angle error, mask IoU."""
import warnings

import numpy as np
from scipy import ndimage

from .errors import InputError, UndefinedMetricWarning

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"size mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(image_a, image_b, mask=None):
    """PSNR in dB for images in [0, 1], optionally restricted to ``mask``.

    Identical inputs are capped at 99 dB.
    """
    a, b = _pair(image_a, image_b)
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:2]:
            raise InputError("mask size mismatch")
        sq = sq[m]
        if sq.size == 0:
            warnings.warn("psnr over an empty mask", UndefinedMetricWarning)
            return float("nan")
    mse = float(np.mean(sq))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return g / g.sum()


def ssim_map(image_a, image_b, data_range=1.0):
    """SSIM over every full 11x11 window; output is (H-10, W-10[, C])."""
    a, b = _pair(image_a, image_b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise InputError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    r = SSIM_WINDOW // 2

    def blur(x):
        y = ndimage.correlate1d(x, g, axis=0, mode="constant")
        y = ndimage.correlate1d(y, g, axis=1, mode="constant")
        return y[r:-r, r:-r]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(image_a, image_b, mask=None):
    """Mean SSIM (Gaussian 11x11, sigma 1.5, K1=0.01, K2=0.03, range 1).

    Channels are averaged. With ``mask`` the map is averaged over window
    centers inside the mask only.
    """
    s = ssim_map(image_a, image_b)
    if mask is None:
        return float(s.mean())
    m = np.asarray(mask, dtype=bool)
    r = SSIM_WINDOW // 2
    m = m[r:-r, r:-r]
    if not m.any():
        warnings.warn("ssim over an empty mask", UndefinedMetricWarning)
        return float("nan")
    return float(s[m].mean())


def normal_error_deg(normal_a, normal_b, mask):
    """Mean angle in degrees between two normal fields over ``mask``."""
    a, b = _pair(normal_a, normal_b)
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        warnings.warn("normal error over an empty mask", UndefinedMetricWarning)
        return float("nan")
    # atan2 form: exact 0 for identical vectors even when not quite unit length
    cross = np.linalg.norm(np.cross(a[m], b[m]), axis=1)
    dots = np.einsum("na,na->n", a[m], b[m])
    return float(np.degrees(np.arctan2(cross, dots)).mean())


def mask_iou(mask_a, mask_b):
    """Intersection over union; two empty masks score 1."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise InputError(f"size mismatch {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
