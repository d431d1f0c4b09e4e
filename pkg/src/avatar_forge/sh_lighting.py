"""Second-order spherical-harmonics irradiance: basis, shading, lighting fits.

Coefficients use the irradiance convention: the clamped-cosine convolution is
folded into the basis, so shading for one channel is ``E[:, c] @ basis(n)``.
Band order: L00, L1-1, L10, L11, L2-2, L2-1, L20, L21, L22.
"""
from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError, InputError

C1 = 0.429043
C2 = 0.511664
C3 = 0.743125
C4 = 0.886227
C5 = 0.247708

BAND_NAMES = ("L00", "L1-1", "L10", "L11", "L2-2", "L2-1", "L20", "L21", "L22")


@dataclass(frozen=True)
class ShCoefficients:
    coeffs: np.ndarray  # (9, 3)

    def __post_init__(self):
        e = np.asarray(self.coeffs, dtype=np.float64)
        if e.shape != (9, 3):
            raise InputError(f"SH coefficients must be 9x3, got {e.shape}")
        if not np.isfinite(e).all():
            raise InputError("SH coefficients must be finite")
        object.__setattr__(self, "coeffs", e)

    @classmethod
    def isotropic(cls, value=1.0):
        """Lighting giving constant shading ``value`` on every normal."""
        e = np.zeros((9, 3))
        e[0] = value / C4
        return cls(e)

    def to_json(self):
        return {"bands": self.coeffs.T.tolist()}

    @classmethod
    def from_json(cls, data):
        if not isinstance(data, dict) or "bands" not in data:
            raise InputError("light JSON needs a 'bands' key")
        try:
            bands = np.asarray(data["bands"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise InputError(f"'bands' must be 3 lists of 9 floats ({exc})") from exc
        if bands.shape != (3, 9):
            raise InputError(f"'bands' must be 3 lists of 9 floats, got shape {bands.shape}")
        return cls(bands.T)


def sh_irradiance_basis(normals, check=True):
    """Folded irradiance basis, shape (..., 9), for unit normals (..., 3)."""
    n = np.asarray(normals, dtype=np.float64)
    if check and n.size:
        norm = np.linalg.norm(n, axis=-1)
        if np.abs(norm - 1.0).max() > 1e-4:
            raise InputError("normals must be unit length within 1e-4")
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack([
        np.full_like(x, C4),
        2.0 * C2 * y,
        2.0 * C2 * z,
        2.0 * C2 * x,
        2.0 * C1 * x * y,
        2.0 * C1 * y * z,
        C3 * z * z - C5,
        2.0 * C1 * x * z,
        C1 * (x * x - y * y),
    ], axis=-1)


def _coeffs(light):
    return light.coeffs if isinstance(light, ShCoefficients) else np.asarray(light, float)


def shade(normal_image, mask, light, clamp_negative=True):
    """Per-pixel RGB shading; zero outside ``mask``."""
    n = np.asarray(normal_image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    out = np.zeros(m.shape + (3,))
    if m.any():
        out[m] = sh_irradiance_basis(n[m]) @ _coeffs(light)
    if clamp_negative:
        np.maximum(out, 0.0, out=out)
    return out


def compose(albedo_image, shading_image, mask, background=(0.0, 0.0, 0.0), clip=False):
    """Lambertian composition ``albedo * shading`` over ``mask``."""
    a = np.asarray(albedo_image, dtype=np.float64)
    s = np.asarray(shading_image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if a.shape != s.shape or a.shape[:2] != m.shape:
        raise InputError(f"size mismatch: albedo {a.shape}, shading {s.shape}, mask {m.shape}")
    out = np.empty_like(a)
    out[...] = np.asarray(background, dtype=np.float64)
    out[m] = a[m] * s[m]
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def estimate_lighting(images, albedo_images, normal_images, masks, max_condition=1e8):
    """Least-squares SH lighting shared by all frames, solved per channel.

    Minimises ``sum (I - A * (E . b(n)))^2`` over masked pixels, without
    clamping. Returns ``(ShCoefficients, rms_residual)``.
    """
    if not len(images):
        raise InputError("need at least one frame")
    if not (len(images) == len(albedo_images) == len(normal_images) == len(masks)):
        raise InputError("images, albedos, normals and masks must have equal counts")
    basis, obs, alb = [], [], []
    for img, a, n, m in zip(images, albedo_images, normal_images, masks):
        m = np.asarray(m, dtype=bool)
        img, a, n = (np.asarray(x, dtype=np.float64) for x in (img, a, n))
        if img.shape[:2] != m.shape or a.shape[:2] != m.shape or n.shape[:2] != m.shape:
            raise InputError("frame size mismatch")
        basis.append(sh_irradiance_basis(n[m]))
        obs.append(img[m])
        alb.append(a[m])
    b = np.concatenate(basis)
    obs = np.concatenate(obs)
    alb = np.concatenate(alb)
    if len(b) < 9:
        raise IllConditionedError("fewer than 9 masked pixels", BAND_NAMES)
    coeffs = np.zeros((9, 3))
    sq = 0.0
    for c in range(3):
        design = alb[:, c:c + 1] * b
        u, sv, vt = np.linalg.svd(design, full_matrices=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if not cond <= max_condition:
            weak = np.abs(vt[sv < sv[0] / max_condition])
            if not len(weak):
                weak = np.abs(vt[-1:])
            score = weak.max(axis=0)
            bands = [BAND_NAMES[i] for i in np.flatnonzero(score > 0.1 * score.max())]
            raise IllConditionedError(
                f"lighting system is rank deficient in channel {c} "
                f"(condition {cond:.3g}); weak bands: {', '.join(bands)}", bands, cond)
        coeffs[:, c] = vt.T @ ((u.T @ obs[:, c]) / sv)
        sq += np.sum((design @ coeffs[:, c] - obs[:, c]) ** 2)
    rms = float(np.sqrt(sq / obs.size))
    return ShCoefficients(coeffs), rms


def mean_shading(light, normal_images, masks):
    """Per-channel mean unclamped shading over all masked pixels."""
    b = np.concatenate([sh_irradiance_basis(np.asarray(n)[np.asarray(m, bool)])
                        for n, m in zip(normal_images, masks)])
    return (b @ _coeffs(light)).mean(axis=0)


def normalize_lighting(light, normal_images, masks):
    """Rescale each channel so mean shading over the masked pixels is 1."""
    mean = mean_shading(light, normal_images, masks)
    if (np.abs(mean) < 1e-12).any():
        raise IllConditionedError("mean shading vanishes; cannot fix the albedo/light scale")
    return ShCoefficients(_coeffs(light) / mean), mean
