"""Silhouette-driven fitting of one per-vertex offset field for a whole video."""
from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .body_model import OffsetField, blended_transforms, mesh_laplacian, shaped_rest_vertices
from .errors import FitDivergedError, InputError
from .metrics import mask_iou
from .parallel import parallel_map
from .rasterizer import band_silhouette, contour_silhouette, hard_mask, soft_silhouette

SILHOUETTES = {"contour": contour_silhouette, "band": band_silhouette,
               "union": soft_silhouette}

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    iterations: int = 300
    step_size: float = 3.0  # meters per unit of objective gradient
    lambda_smooth: float = 0.02
    tau: float = 3e-5  # normalized device coordinates squared
    tau_decay: float = 0.5
    tau_interval: int = 60
    convergence_tol: float = 1e-7
    max_halvings: int = 12
    resolution_scale: float = 1.0  # below 1 fits on downsampled masks; IoU is always full size
    smooth_eps: float = 1e-4  # meters; rounds the Laplacian norm at zero
    precondition: float = 20.0  # alpha in (I + alpha L^T L)^-1; 0 gives plain descent
    silhouette: str = "contour"  # "contour", "band" or "union"; see SILHOUETTES

    def __post_init__(self):
        for name in ("iterations", "step_size", "lambda_smooth", "tau", "tau_decay",
                     "tau_interval", "convergence_tol", "max_halvings", "resolution_scale",
                     "smooth_eps"):
            if not getattr(self, name) > 0:
                raise InputError(f"FitConfig.{name} must be positive")
        if self.precondition < 0:
            raise InputError("FitConfig.precondition must be non-negative")
        if self.silhouette not in SILHOUETTES:
            raise InputError(f"FitConfig.silhouette must be one of {sorted(SILHOUETTES)}")


def tau_pixels(tau_ndc, camera):
    """Convert a temperature in NDC units to squared pixels."""
    return tau_ndc * (max(camera.width, camera.height) / 2.0) ** 2


def silhouette_loss(soft_masks, target_masks):
    """Mean over frames of the per-pixel mean absolute difference."""
    if len(soft_masks) != len(target_masks) or not len(soft_masks):
        raise InputError("need equal, non-zero frame counts")
    total = 0.0
    for s, t in zip(soft_masks, target_masks):
        s = np.asarray(s, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if s.shape != t.shape:
            raise InputError(f"mask size mismatch {s.shape} vs {t.shape}")
        total += np.abs(s - t).mean()
    return total / len(soft_masks)


def smoothness_loss(posed_vertices, triangles, reference=None):
    """Mean over frames of the Frobenius norm of the uniform Laplacian.

    With ``reference`` (matching per-frame vertex arrays) the Laplacian is
    taken of the displacement from the reference, which is what the fitter
    penalises.
    """
    frames = list(posed_vertices)
    if not frames:
        raise InputError("need at least one frame")
    lap, _ = mesh_laplacian(triangles, len(frames[0]))
    refs = [None] * len(frames) if reference is None else list(reference)
    total = 0.0
    for m, r in zip(frames, refs):
        x = np.asarray(m, float) if r is None else np.asarray(m, float) - np.asarray(r, float)
        total += np.linalg.norm(lap @ x)
    return total / len(frames)


@dataclass
class FitResult:
    offsets: OffsetField
    trace: list
    iou_before: list
    iou_after: list
    converged: bool
    selected_iteration: int = -1  # iterate returned; 0 means the initial guess

    def report(self):
        return {
            "iou_before": [float(x) for x in self.iou_before],
            "iou_after": [float(x) for x in self.iou_after],
            "converged": self.converged,
            "selected_iteration": self.selected_iteration,
            "trace": self.trace,
        }


class OffsetObjective:
    """Silhouette + Laplacian objective over a fixed set of posed frames.

    Offsets map to posed vertices through fixed per-vertex blended transforms,
    so the objective and its gradient are evaluated exactly by chaining the
    soft-silhouette backward pass through those 3x3 blocks.
    """

    def __init__(self, model, poses, cameras, target_masks, lambda_smooth, shape=None,
                 smooth_eps=1e-4, silhouette="contour"):
        if not (len(poses) == len(cameras) == len(target_masks)) or not len(poses):
            raise InputError("every frame needs a pose, a camera and a target mask")
        self.model = model
        self.cameras = list(cameras)
        self.targets = []
        for cam, t in zip(self.cameras, target_masks):
            t = np.asarray(t, dtype=np.float64)
            if t.shape != cam.shape:
                raise InputError(f"target mask {t.shape} does not match camera {cam.shape}")
            if not np.isin(t, (0.0, 1.0)).all():
                raise InputError("target masks must be binary")
            self.targets.append(t)
        self.lambda_smooth = float(lambda_smooth)
        self.smooth_eps = float(smooth_eps)
        if silhouette not in SILHOUETTES:
            raise InputError(f"unknown silhouette {silhouette!r}")
        self.render = SILHOUETTES[silhouette]
        self.base = shaped_rest_vertices(model, shape)
        self.transforms = [blended_transforms(model, p) for p in poses]
        self.lap, _ = mesh_laplacian(model.triangles, model.n_vertices)

    @property
    def n_frames(self):
        return len(self.cameras)

    def posed(self, offsets, frame):
        t = self.transforms[frame]
        return np.einsum("vab,vb->va", t[:, :, :3], self.base + offsets) + t[:, :, 3]

    def _frame(self, offsets, k, tau_ndc, with_grad):
        cam = self.cameras[k]
        t = self.transforms[k]
        verts = self.posed(offsets, k)
        sil = self.render(verts, self.model.triangles, cam, tau_pixels(tau_ndc, cam))
        diff = sil.image - self.targets[k]
        l_sil = np.abs(diff).mean()
        x = self.lap @ np.einsum("vab,vb->va", t[:, :, :3], offsets)
        # Charbonnier-rounded Frobenius norm, differentiable at zero offsets
        norm = np.sqrt(np.sum(x * x) + self.smooth_eps ** 2) - self.smooth_eps
        if not with_grad:
            return l_sil, norm, None
        g_posed = sil.backward(np.sign(diff) / diff.size)
        g_posed = g_posed + self.lambda_smooth * (self.lap.T @ (x / (norm + self.smooth_eps)))
        return l_sil, norm, np.einsum("vba,vb->va", t[:, :, :3], g_posed)

    def evaluate(self, offsets, tau_ndc, with_grad=True):
        """Returns ``(objective, silhouette_term, smooth_term, gradient)``."""
        d = np.asarray(offsets, dtype=np.float64)
        results = parallel_map(lambda k: self._frame(d, k, tau_ndc, with_grad),
                               range(self.n_frames))
        f = self.n_frames
        l_sil = sum(r[0] for r in results) / f
        l_smooth = sum(r[1] for r in results) / f
        grad = sum(r[2] for r in results) / f if with_grad else None
        return l_sil + self.lambda_smooth * l_smooth, l_sil, l_smooth, grad

    def hard_masks(self, offsets):
        return [hard_mask(self.posed(offsets, k), self.model.triangles, cam)
                for k, cam in enumerate(self.cameras)]


def smoothing_preconditioner(lap, alpha):
    """Returns ``g -> (I + alpha L^T L)^-1 g`` applied column-wise."""
    if alpha == 0:
        return lambda g: g
    n = lap.shape[0]
    solve = spla.factorized((sp.identity(n) + alpha * (lap.T @ lap)).tocsc())
    return lambda g: np.stack([solve(g[:, k]) for k in range(g.shape[1])], axis=1)


def _downsample_mask(mask, shape):
    import cv2

    h, w = shape
    m = cv2.resize(np.asarray(mask, np.float32), (w, h), interpolation=cv2.INTER_AREA)
    return (m >= 0.5).astype(np.float64)


def fit_offsets(model, poses, cameras, target_masks, config=None, shape=None, init=None):
    """Gradient descent on silhouette + lambda * smoothness over the offsets.

    The step starts at ``config.step_size`` and is halved until the objective
    decreases (at most ``max_halvings`` times). The soft-silhouette
    temperature is multiplied by ``tau_decay`` every ``tau_interval``
    iterations; the trace is monotone between those changes.

    The soft loss is only a proxy for mask agreement, so each temperature
    stage ends with a hard-mask check and the iterate with the best mean IoU
    (the initial guess included) is returned.
    """
    cfg = config or FitConfig()
    cams = list(cameras)
    targets = [np.asarray(t, dtype=np.float64) for t in target_masks]
    if cfg.resolution_scale != 1.0:
        fit_cams = [c.scaled(cfg.resolution_scale) for c in cams]
        fit_targets = [_downsample_mask(t, c.shape) for t, c in zip(targets, fit_cams)]
    else:
        fit_cams, fit_targets = cams, targets
    obj = OffsetObjective(model, poses, fit_cams, fit_targets, cfg.lambda_smooth, shape,
                          cfg.smooth_eps, cfg.silhouette)
    full = obj if fit_cams is cams else OffsetObjective(model, poses, cams, targets,
                                                        cfg.lambda_smooth, shape, cfg.smooth_eps,
                                                        cfg.silhouette)

    precond = smoothing_preconditioner(obj.lap, cfg.precondition)
    d = np.zeros((model.n_vertices, 3)) if init is None else np.array(init, dtype=np.float64)
    def hard_iou(x):
        return [mask_iou(h, t > 0.5) for h, t in zip(full.hard_masks(x), targets)]

    iou_before = hard_iou(d)
    best = (np.mean(iou_before), 0, d, iou_before)

    trace = []
    tau = cfg.tau
    step = cfg.step_size
    value, l_sil, l_smooth, grad = obj.evaluate(d, tau)
    direction = precond(grad)
    initial = value
    converged = False
    it = 0
    while it < cfg.iterations:
        accepted = False
        trial = step
        for _ in range(cfg.max_halvings + 1):
            cand = d - trial * direction
            v_new, s_new, m_new, _ = obj.evaluate(cand, tau, with_grad=False)
            if v_new < value:
                accepted = True
                break
            trial *= 0.5
        rel = (value - v_new) / max(abs(value), 1e-30) if accepted else 0.0
        if accepted:
            d = cand
            step = min(trial * 2.0, cfg.step_size)
            value, l_sil, l_smooth = v_new, s_new, m_new
        if value > 10.0 * initial + 1e-12:
            raise FitDivergedError(f"objective {value:.4g} exceeds 10x initial {initial:.4g}",
                                   trace)
        stalled = (not accepted) or rel < cfg.convergence_tol
        it += 1
        trace.append({"iteration": it, "tau": tau, "objective": float(value),
                      "silhouette": float(l_sil), "smooth": float(l_smooth),
                      "step": float(trial if accepted else 0.0), "accepted": accepted})
        if stalled:
            # skip ahead to the next temperature, or stop after the last one
            next_anneal = (it // cfg.tau_interval + 1) * cfg.tau_interval
            converged = next_anneal >= cfg.iterations
            it = min(next_anneal, cfg.iterations)
        if it % cfg.tau_interval == 0 or it >= cfg.iterations:
            iou = hard_iou(d)
            if np.mean(iou) > best[0]:
                best = (np.mean(iou), it, d, iou)
        if converged or it >= cfg.iterations:
            break
        if it % cfg.tau_interval == 0:
            tau *= cfg.tau_decay
            step = cfg.step_size
        value, l_sil, l_smooth, grad = obj.evaluate(d, tau)
        direction = precond(grad)
    _, selected, d, iou_after = best
    log.info("fit finished after %d iterations, IoU %s -> %s (iterate %d)", it,
             np.round(iou_before, 4), np.round(iou_after, 4), selected)
    return FitResult(OffsetField(d), trace, iou_before, iou_after, converged, selected)
