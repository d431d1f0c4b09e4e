"""UV texture extraction, median aggregation and classical delighting."""
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
from scipy import ndimage

from .errors import InputError, UndefinedMetricWarning
from .rasterizer import sample_nearest, texel_index
from .sh_lighting import ShCoefficients, estimate_lighting, normalize_lighting, sh_irradiance_basis

log = logging.getLogger(__name__)

DEFAULT_ATLAS_SHAPE = (512, 512)


@dataclass
class TextureAtlas:
    color: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool
    observed: np.ndarray = None  # texels that received samples, before hole filling

    def __post_init__(self):
        self.color = np.array(self.color, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.color.shape[:2] != self.valid.shape or self.color.shape[2:] != (3,):
            raise InputError("atlas color must be (H, W, 3) matching the validity mask")
        if not np.isfinite(self.color).all():
            raise InputError("atlas colors must be finite")
        self.color[~self.valid] = 0.0
        if self.observed is None:
            self.observed = self.valid.copy()

    @property
    def shape(self):
        return self.valid.shape

    @classmethod
    def constant(cls, rgb, shape=DEFAULT_ATLAS_SHAPE):
        color = np.empty(tuple(shape) + (3,))
        color[...] = rgb
        return cls(color, np.ones(shape, dtype=bool))


@dataclass
class TexelSampleSet:
    """Flat per-sample arrays; ``texel`` indexes the atlas in row-major order."""
    shape: tuple
    texel: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    color: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frame: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pixel: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    normal: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))  # world space

    def __len__(self):
        return len(self.texel)

    @classmethod
    def merge(cls, parts):
        """Concatenate increments, ordered by (frame id, pixel index)."""
        parts = list(parts)
        if not parts:
            raise InputError("nothing to merge")
        shape = parts[0].shape
        if any(p.shape != shape for p in parts):
            raise InputError("sample sets target different atlas sizes")
        cat = {k: np.concatenate([getattr(p, k) for p in parts])
               for k in ("texel", "color", "weight", "frame", "pixel", "normal")}
        order = np.lexsort((cat["pixel"], cat["frame"]))
        return cls(shape, **{k: v[order] for k, v in cat.items()})


def backproject_frame(frame_image, gbuffer, camera, atlas_shape=DEFAULT_ATLAS_SHAPE, frame_id=0):
    """Deposit every masked pixel's color at the texel under its uv.

    The sample weight is ``|n . view|`` with both vectors in camera space.
    """
    img = np.asarray(frame_image, dtype=np.float64)
    if img.shape[:2] != gbuffer.mask.shape or gbuffer.mask.shape != camera.shape:
        raise InputError(f"frame {img.shape[:2]} does not match G-buffer {gbuffer.mask.shape}")
    rows, cols = np.nonzero(gbuffer.mask)
    if len(rows) == 0:
        return TexelSampleSet(tuple(atlas_shape))
    z = gbuffer.depth_image[rows, cols]
    p = np.stack([(cols + 0.5 - camera.cx) / camera.fx * z,
                  (rows + 0.5 - camera.cy) / camera.fy * z, z], axis=1)
    view = -p / np.linalg.norm(p, axis=1, keepdims=True)
    n = gbuffer.normal_image[rows, cols]
    weight = np.clip(np.abs(np.einsum("na,na->n", n, view)), 0.0, 1.0)
    tr, tc = texel_index(gbuffer.uv_image[rows, cols], atlas_shape)
    return TexelSampleSet(
        tuple(atlas_shape),
        texel=tr * atlas_shape[1] + tc,
        color=img[rows, cols, :3],
        weight=weight,
        frame=np.full(len(rows), frame_id, dtype=np.int64),
        pixel=rows * img.shape[1] + cols,
        normal=gbuffer.world_normal_image[rows, cols],
    )


def orthogonal_subset(samples, fraction):
    """Indices of samples whose weight is at least ``fraction`` of their texel's max."""
    if not 0.0 < fraction <= 1.0:
        raise InputError("orthogonality fraction must lie in (0, 1]")
    best = np.zeros(int(np.prod(samples.shape)))
    np.maximum.at(best, samples.texel, samples.weight)
    return np.flatnonzero(samples.weight >= fraction * best[samples.texel])


def grouped_median(groups, values):
    """Median of ``values`` within each group id. Returns ``(ids, medians)``."""
    groups = np.asarray(groups)
    values = np.asarray(values, dtype=np.float64)
    if len(groups) == 0:
        return groups[:0], values[:0]
    order = np.lexsort((values, groups))
    g = groups[order]
    v = values[order]
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    counts = np.diff(np.r_[starts, len(g)])
    lo = starts + (counts - 1) // 2
    hi = starts + counts // 2
    return g[starts], 0.5 * (v[lo] + v[hi])


def _median_atlas(shape, texels, values):
    color = np.zeros((int(np.prod(shape)), 3))
    valid = np.zeros(int(np.prod(shape)), dtype=bool)
    for c in range(3):
        ids, med = grouped_median(texels, values[:, c])
        color[ids, c] = med
        valid[ids] = True
    return TextureAtlas(color.reshape(tuple(shape) + (3,)), valid.reshape(shape))


def aggregate_median(samples, orthogonality_fraction=0.8):
    """Per-texel, per-channel median over the most orthogonal samples."""
    keep = orthogonal_subset(samples, orthogonality_fraction)
    return _median_atlas(samples.shape, samples.texel[keep], samples.color[keep])


def max_orthogonality(samples):
    best = np.zeros(int(np.prod(samples.shape)))
    np.maximum.at(best, samples.texel, samples.weight)
    return best.reshape(samples.shape)


def fill_holes(atlas, depth=8):
    """Copy the nearest valid texel into invalid texels within ``depth``."""
    if not atlas.valid.any() or atlas.valid.all():
        return TextureAtlas(atlas.color.copy(), atlas.valid.copy(), atlas.observed.copy())
    dist, (ri, ci) = ndimage.distance_transform_edt(~atlas.valid, return_indices=True)
    fill = (~atlas.valid) & (dist <= depth)
    color = atlas.color.copy()
    color[fill] = atlas.color[ri[fill], ci[fill]]
    return TextureAtlas(color, atlas.valid | fill, atlas.observed.copy())


@dataclass
class DelightResult:
    albedo: TextureAtlas  # hole-filled
    light: object  # ShCoefficients, mean shading 1 per channel
    shaded: TextureAtlas  # median texture before delighting
    trace: list
    residual: np.ndarray  # (H, W) per-texel median |albedo * shading - color|
    converged: bool


def delight_texels(samples, keep, shading, shape):
    """Albedo atlas as the per-texel median of ``color / shading``."""
    s = shading[keep]
    ok = (s > 1e-6).all(axis=1)
    idx = keep[ok]
    return _median_atlas(shape, samples.texel[idx], samples.color[idx] / s[ok])


def texel_residual(samples, keep, shading, albedo):
    """Per-texel median (over samples and channels) of |albedo * shading - color|."""
    flat = albedo.color.reshape(-1, 3)
    pred = flat[samples.texel[keep]] * shading[keep]
    err = np.abs(pred - samples.color[keep]).mean(axis=1)
    ids, med = grouped_median(samples.texel[keep], err)
    out = np.zeros(int(np.prod(samples.shape)))
    out[ids] = med
    return out.reshape(samples.shape)


def delight(frames, gbuffers, masks, cameras=None, samples=None,
            atlas_shape=DEFAULT_ATLAS_SHAPE, orthogonality_fraction=0.8,
            max_iterations=50, tol=1e-4, hole_fill=8, anderson=5):
    """Alternate lighting and albedo estimates from shaded frames.

    Each round re-estimates every texel as the median of observed color
    divided by shading under the current light, renders that albedo, solves
    one SH light for all frames against it and rescales the light to unit
    mean shading per channel (fixing the albedo/light scale). Stops when the
    light changes by less than ``tol`` (relative) or after ``max_iterations``;
    in the latter case the lowest-residual iterate is returned with
    ``converged=False``.

    ``anderson`` > 0 extrapolates the light from that many previous rounds
    (Anderson mixing). The fixed point is unchanged, but plain alternation
    contracts slowly because each texel's median only sees its most
    orthogonal views, so the albedo absorbs most of any light error.
    """
    if len(frames) < 2:
        raise InputError("delighting needs at least two frames")
    if anderson < 0:
        raise InputError("anderson memory must be >= 0")
    frames = [np.asarray(f, dtype=np.float64)[..., :3] for f in frames]
    masks = [np.asarray(m, dtype=bool) & gb.mask for m, gb in zip(masks, gbuffers)]
    if samples is None:
        if cameras is None:
            raise InputError("cameras are required to back-project samples")
        samples = TexelSampleSet.merge(
            backproject_frame(f, gb, cam, atlas_shape, k)
            for k, (f, gb, cam) in enumerate(zip(frames, gbuffers, cameras)))
    shape = samples.shape
    keep = orthogonal_subset(samples, orthogonality_fraction)
    shaded = _median_atlas(shape, samples.texel[keep], samples.color[keep])
    normals = [gb.world_normal_image for gb in gbuffers]
    sample_basis = sh_irradiance_basis(samples.normal, check=False)

    def albedo_for(coeffs):
        return fill_holes(delight_texels(samples, keep, sample_basis @ coeffs, shape), hole_fill)

    def solve(albedo):
        renders = [sample_nearest(albedo.color, gb.uv_image) for gb in gbuffers]
        raw, rms = estimate_lighting(frames, renders, normals, masks)
        return normalize_lighting(raw, normals, masks)[0].coeffs, rms

    x, rms = solve(fill_holes(shaded, hole_fill))
    trace = [{"iteration": 0, "rms": float(rms), "light_change": float("inf")}]
    best = (rms, x)
    xs, fs = [], []
    converged = False
    for it in range(1, max_iterations + 1):
        g, rms = solve(albedo_for(x))
        change = np.linalg.norm(g - x) / np.linalg.norm(x)
        trace.append({"iteration": it, "rms": float(rms), "light_change": float(change)})
        if rms < best[0]:
            best = (rms, g)
        if change < tol:
            converged = True
            best = (rms, g)
            break
        xs.append(x.ravel())
        fs.append((g - x).ravel())
        if anderson and len(fs) > 1:
            # type-II mixing; the weights sum to one, so unit mean shading is kept
            d_x = np.diff(xs[-anderson - 1:], axis=0).T
            d_f = np.diff(fs[-anderson - 1:], axis=0).T
            gamma = np.linalg.lstsq(d_f, fs[-1], rcond=1e-10)[0]
            x = (xs[-1] + fs[-1] - (d_x + d_f) @ gamma).reshape(x.shape)
        else:
            x = g
    if not converged:
        warnings.warn(f"delighting did not converge in {max_iterations} iterations")
    light = ShCoefficients(best[1])
    shading = sample_basis @ light.coeffs
    albedo = albedo_for(light.coeffs)
    residual = texel_residual(samples, keep, shading, albedo)
    trace[-1]["median_texel_residual"] = float(np.median(residual[albedo.observed]))
    return DelightResult(albedo, light, shaded, trace, residual, converged)


def gaussian_kernel(k):
    if k < 1 or k % 2 == 0:
        raise InputError(f"kernel size must be a positive odd integer, got {k}")
    sigma = k / 6.0
    x = np.arange(k) - k // 2
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return g / g.sum()


def gaussian_smooth(image, k=51):
    """Separable Gaussian blur, sigma = k / 6, mirrored borders."""
    g = gaussian_kernel(int(k))
    out = ndimage.correlate1d(np.asarray(image, dtype=np.float64), g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


def albedo_reg(refined_albedo, coarse_albedo, k=51):
    """Mean squared difference of the k-smoothed albedo images."""
    a = np.asarray(refined_albedo, dtype=np.float64)
    b = np.asarray(coarse_albedo, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"size mismatch {a.shape} vs {b.shape}")
    return float(np.mean((gaussian_smooth(a, k) - gaussian_smooth(b, k)) ** 2))


def normal_reg(normal_image, coarse_normal_image, mask):
    """Mean absolute normal difference over masked pixels and all channels."""
    a = np.asarray(normal_image, dtype=np.float64)
    b = np.asarray(coarse_normal_image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or a.shape[:2] != m.shape:
        raise InputError("size mismatch")
    if not m.any():
        warnings.warn("normal regularizer over an empty mask", UndefinedMetricWarning)
        return 0.0
    return float(np.abs(a[m] - b[m]).mean())
