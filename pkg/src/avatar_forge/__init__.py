"""Relightable articulated avatars from silhouettes, turntable texture and SH lighting."""
from .body_model import OffsetField, Pose, RiggedBodyModel, pose_mesh, vertex_normals
from .errors import (DatasetError, FitDivergedError, IllConditionedError, InputError,
                     UndefinedMetricWarning)
from .fitting import FitConfig, fit_offsets
from .rasterizer import Camera, GBuffer, rasterize_gbuffer, soft_silhouette
from .sh_lighting import ShCoefficients, compose, estimate_lighting, shade
from .texture import TextureAtlas, delight

__version__ = "0.1.0"
