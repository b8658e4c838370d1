"""
Gaussian scene representation.

A scene is a static Gaussian set plus a canonical dynamic set that is moved to
each timestamp by a rigid deformation (A_t, E_t). An exposure weight w_t
spreads extra object motion across the subframes of one exposure. Every frame
also owns a camera: a fixed initial pose plus learnable start/end twists.
"""

import copy
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from .base import DTYPE, SpecError, SubframeIndexError, UnknownTimestampError, as_tensor
from .se3 import (AffineWarp, Pose, Rotation, Twist, exp, quat_canonical,
                  quat_multiply, quat_normalize, quat_to_matrix)

logger = logging.getLogger(__name__)

SH_C1 = 0.4886025119029199
MIN_SCALE = 1e-6
MAX_SCALE = 1e3

# Learnable tensors grouped the way gradients are checked and optimizers are built
PARAMETER_CLASSES: Dict[str, Tuple[str, ...]] = {
    "means": ("static_means", "dynamic_means"),
    "log_scales": ("static_log_scales", "dynamic_log_scales"),
    "rotations": ("static_rotations", "dynamic_rotations"),
    "opacities": ("static_opacity_logits", "dynamic_opacity_logits"),
    "colors": ("static_colors", "static_sh", "dynamic_colors", "dynamic_sh"),
    "deformation": ("deform_rotations", "deform_translations"),
    "exposure_weights": ("exposure_weights",),
    "camera_twists": ("camera_start", "camera_end"),
}
SCENE_CLASSES = ("means", "log_scales", "rotations", "opacities", "colors",
                 "deformation", "exposure_weights")
POSE_CLASSES = ("camera_twists",)

_FIELDS = ("means", "log_scales", "rotations", "opacity_logits", "colors", "sh")


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic Gaussian.

    sh holds the degree-1 coefficients as a (3 basis, 3 rgb) block expressed in
    the primitive's own frame, so rigid motion never has to touch colour.
    """
    mean: torch.Tensor
    log_scale: torch.Tensor
    rotation: torch.Tensor
    opacity_logit: torch.Tensor
    color: torch.Tensor
    sh: torch.Tensor

    @property
    def scale(self) -> torch.Tensor:
        return torch.exp(self.log_scale).clamp(MIN_SCALE, MAX_SCALE)

    @property
    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logit)

    def covariance(self) -> torch.Tensor:
        r = quat_to_matrix(quat_normalize(self.rotation))
        return r @ torch.diag(self.scale ** 2) @ r.T


@dataclass(frozen=True)
class GaussianSet:
    """Batched primitives, leading dimension G"""
    means: torch.Tensor
    log_scales: torch.Tensor
    rotations: torch.Tensor
    opacity_logits: torch.Tensor
    colors: torch.Tensor
    sh: torch.Tensor

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(torch.zeros(0, 3, dtype=DTYPE), torch.zeros(0, 3, dtype=DTYPE),
                   torch.zeros(0, 4, dtype=DTYPE), torch.zeros(0, dtype=DTYPE),
                   torch.zeros(0, 3, dtype=DTYPE), torch.zeros(0, 3, 3, dtype=DTYPE))

    @classmethod
    def from_primitives(cls, primitives: Sequence[GaussianPrimitive]) -> "GaussianSet":
        if not primitives:
            return cls.empty()
        return cls(
            torch.stack([as_tensor(p.mean) for p in primitives]),
            torch.stack([as_tensor(p.log_scale) for p in primitives]),
            torch.stack([as_tensor(p.rotation) for p in primitives]),
            torch.stack([as_tensor(p.opacity_logit).reshape(()) for p in primitives]),
            torch.stack([as_tensor(p.color) for p in primitives]),
            torch.stack([as_tensor(p.sh) for p in primitives]),
        )

    def __len__(self) -> int:
        return int(self.means.shape[0])

    def __getitem__(self, index: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.means[index], self.log_scales[index], self.rotations[index],
                                 self.opacity_logits[index], self.colors[index], self.sh[index])

    def primitives(self) -> List[GaussianPrimitive]:
        return [self[i] for i in range(len(self))]

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        return GaussianSet(*(torch.cat([getattr(self, f), getattr(other, f)]) for f in _FIELDS))

    def select(self, index: torch.Tensor) -> "GaussianSet":
        return GaussianSet(*(getattr(self, f)[index] for f in _FIELDS))

    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales).clamp(MIN_SCALE, MAX_SCALE)

    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    def rotation_matrices(self) -> torch.Tensor:
        return quat_to_matrix(quat_normalize(self.rotations))

    def covariances(self) -> torch.Tensor:
        r = self.rotation_matrices()
        return r @ torch.diag_embed(self.scales() ** 2) @ r.transpose(-1, -2)

    def with_opacity_logits(self, logits: torch.Tensor) -> "GaussianSet":
        return replace(self, opacity_logits=logits)


def evaluate_color(gaussians: Union[GaussianPrimitive, GaussianSet], view_direction: torch.Tensor) -> torch.Tensor:
    """Base colour plus degree-1 SH for a world-space unit view direction.

    The direction is rotated into each primitive's frame before the real SH
    basis (-C1 y, C1 z, -C1 x) is evaluated. The result is not clamped.
    """
    if isinstance(gaussians, GaussianPrimitive):
        rotation, color, sh = gaussians.rotation, gaussians.color, gaussians.sh
    else:
        rotation, color, sh = gaussians.rotations, gaussians.colors, gaussians.sh
    r = quat_to_matrix(quat_normalize(rotation))
    local = (r.transpose(-1, -2) @ view_direction[..., None])[..., 0]
    x, y, z = local.unbind(-1)
    basis = torch.stack([-SH_C1 * y, SH_C1 * z, -SH_C1 * x], dim=-1)
    return color + (basis[..., None] * sh).sum(-2)


def apply_warp(gaussians: GaussianSet, warp: AffineWarp) -> GaussianSet:
    """mu' = R mu + t and Sigma' = R Sigma R^T, realised on the rotation quaternion"""
    r = warp.rotation.matrix()
    return GaussianSet(
        means=gaussians.means @ r.T + warp.translation,
        log_scales=gaussians.log_scales,
        rotations=quat_multiply(warp.rotation.quat, gaussians.rotations),
        opacity_logits=gaussians.opacity_logits,
        colors=gaussians.colors,
        sh=gaussians.sh,
    )


def subframe_weight(w_t: torch.Tensor, i: int, n: int) -> torch.Tensor:
    """Linear blend from +w_t/2 at subframe 1 to -w_t/2 at subframe n"""
    if n < 1:
        raise SpecError(f"subframe count must be >= 1, got {n}")
    if not 1 <= i <= n:
        raise SubframeIndexError(f"subframe index {i} outside 1..{n}")
    w_t = as_tensor(w_t)
    if n == 1:
        return torch.zeros_like(w_t)
    f = (i - 1) / (n - 1)
    return (1 - f) * (w_t / 2) + f * (-w_t / 2)


class SceneModel(nn.Module):
    """Learnable scene: static and canonical dynamic Gaussians plus per-frame state"""

    def __init__(self, static: GaussianSet, dynamic: GaussianSet, timestamps: Sequence[int],
                 initial_poses: Sequence[Pose]):
        super().__init__()
        if len(timestamps) != len(initial_poses):
            raise SpecError("every timestamp needs exactly one initial pose")
        if len(set(timestamps)) != len(timestamps):
            raise SpecError("timestamps must be unique")
        self.timestamps = [int(t) for t in timestamps]
        self._index = {t: i for i, t in enumerate(self.timestamps)}
        count = len(self.timestamps)

        for prefix, gaussians in (("static", static), ("dynamic", dynamic)):
            for field in _FIELDS:
                setattr(self, f"{prefix}_{field}", nn.Parameter(getattr(gaussians, field).detach().clone().to(DTYPE)))

        identity = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE)
        self.deform_rotations = nn.Parameter(identity.repeat(count, 1))
        self.deform_translations = nn.Parameter(torch.zeros(count, 3, dtype=DTYPE))
        self.exposure_weights = nn.Parameter(torch.zeros(count, 6, dtype=DTYPE))
        self.camera_start = nn.Parameter(torch.zeros(count, 6, dtype=DTYPE))
        self.camera_end = nn.Parameter(torch.zeros(count, 6, dtype=DTYPE))
        poses = torch.stack([p.to_vector().detach() for p in initial_poses]) if count else torch.zeros(0, 7, dtype=DTYPE)
        self.register_buffer("initial_poses", poses.to(DTYPE))

    # ------------------------------------------------------------------ lookups
    def index_of(self, t: int) -> int:
        try:
            return self._index[int(t)]
        except (KeyError, TypeError, ValueError):
            raise UnknownTimestampError(t) from None

    def static_set(self) -> GaussianSet:
        return GaussianSet(self.static_means, self.static_log_scales, self.static_rotations,
                           self.static_opacity_logits, self.static_colors, self.static_sh)

    def dynamic_set(self) -> GaussianSet:
        return GaussianSet(self.dynamic_means, self.dynamic_log_scales, self.dynamic_rotations,
                           self.dynamic_opacity_logits, self.dynamic_colors, self.dynamic_sh)

    def deformation(self, t: int) -> Pose:
        i = self.index_of(t)
        return Pose(Rotation(quat_canonical(quat_normalize(self.deform_rotations[i]))),
                    self.deform_translations[i])

    def exposure_weight(self, t: int) -> torch.Tensor:
        return self.exposure_weights[self.index_of(t)]

    def initial_pose(self, t: int) -> Pose:
        return Pose.from_vector(self.initial_poses[self.index_of(t)])

    def camera_twists(self, t: int) -> Tuple[Twist, Twist]:
        i = self.index_of(t)
        return Twist(self.camera_start[i]), Twist(self.camera_end[i])

    # ------------------------------------------------------------------ groups
    def class_parameters(self, classes: Sequence[str]) -> List[nn.Parameter]:
        return [getattr(self, name) for cls in classes for name in PARAMETER_CLASSES[cls]]

    def named_class_parameters(self, classes: Sequence[str]) -> Dict[str, nn.Parameter]:
        return {name: getattr(self, name) for cls in classes for name in PARAMETER_CLASSES[cls]}

    @torch.no_grad()
    def renormalize_(self, classes: Sequence[str]) -> None:
        """Project updated parameters back onto their valid sets"""
        if "rotations" in classes:
            for p in (self.static_rotations, self.dynamic_rotations):
                p.copy_(quat_canonical(quat_normalize(p)))
        if "deformation" in classes:
            self.deform_rotations.copy_(quat_canonical(quat_normalize(self.deform_rotations)))
        if "log_scales" in classes:
            for p in (self.static_log_scales, self.dynamic_log_scales):
                p.clamp_(math.log(MIN_SCALE), math.log(MAX_SCALE))

    def clone(self) -> "SceneModel":
        return copy.deepcopy(self)

    # ------------------------------------------------------------ persistence
    def describe(self) -> Dict[str, object]:
        """Shape information needed to rebuild an empty model before loading a state dict"""
        return {
            "static_count": len(self.static_means),
            "dynamic_count": len(self.dynamic_means),
            "timestamps": list(self.timestamps),
        }

    @classmethod
    def from_description(cls, description: Mapping[str, object]) -> "SceneModel":
        def blank(count: int) -> GaussianSet:
            return GaussianSet(
                torch.zeros(count, 3, dtype=DTYPE), torch.zeros(count, 3, dtype=DTYPE),
                torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE).repeat(count, 1),
                torch.zeros(count, dtype=DTYPE), torch.zeros(count, 3, dtype=DTYPE),
                torch.zeros(count, 3, 3, dtype=DTYPE))
        timestamps = list(description["timestamps"])
        return cls(blank(int(description["static_count"])), blank(int(description["dynamic_count"])),
                   timestamps, [Pose.identity()] * len(timestamps))

    # ---------------------------------------------------------- initialization
    @classmethod
    def from_points(cls, static_points: torch.Tensor, dynamic_tracks: Mapping[int, torch.Tensor],
                    canonical_t: int, initial_poses: Mapping[int, Pose], opacity: float = 0.3,
                    gray: float = 0.5) -> "SceneModel":
        """Initialize from a sparse point cloud.

        static_points: (S, 3). dynamic_tracks maps each timestamp to the same D
        dynamic points observed at that frame; the canonical frame's points,
        centred on their centroid, become the canonical set and every E_t starts
        at that frame's centroid.
        """
        timestamps = sorted(initial_poses)
        static = _initial_set(as_tensor(static_points), opacity, gray)
        if dynamic_tracks:
            if canonical_t not in dynamic_tracks:
                raise UnknownTimestampError(canonical_t)
            canonical = as_tensor(dynamic_tracks[canonical_t])
            dynamic = _initial_set(canonical - canonical.mean(0), opacity, gray)
        else:
            dynamic = GaussianSet.empty()
        scene = cls(static, dynamic, timestamps, [initial_poses[t] for t in timestamps])
        with torch.no_grad():
            for t, track in dynamic_tracks.items():
                scene.deform_translations[scene.index_of(t)] = as_tensor(track).mean(0)
        logger.info("Initialized scene: %d static, %d dynamic Gaussians, canonical frame %s",
                    len(static), len(dynamic), canonical_t)
        return scene


def _initial_set(points: torch.Tensor, opacity: float, gray: float) -> GaussianSet:
    count = points.shape[0]
    if count == 0:
        return GaussianSet.empty()
    if count > 1:
        k = min(3, count - 1)
        dist = torch.cdist(points, points)
        dist.fill_diagonal_(float("inf"))
        nearest = dist.topk(k, largest=False).values
        scale = torch.sqrt((nearest ** 2).mean(-1)).clamp_min(1e-3)
    else:
        scale = torch.full((1,), 0.1, dtype=DTYPE)
    return GaussianSet(
        means=points.clone(),
        log_scales=torch.log(scale)[:, None].repeat(1, 3),
        rotations=torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE).repeat(count, 1),
        opacity_logits=torch.full((count,), math.log(opacity / (1 - opacity)), dtype=DTYPE),
        colors=torch.full((count, 3), gray, dtype=DTYPE),
        sh=torch.zeros(count, 3, 3, dtype=DTYPE),
    )


def deform_dynamic(scene: SceneModel, t: int, weight: Optional[torch.Tensor] = None) -> GaussianSet:
    """Canonical dynamic set moved by exp(weight) o (A_t, E_t); static Gaussians are not touched"""
    frame = scene.deformation(t)
    if weight is None:
        weight = torch.zeros(6, dtype=DTYPE)
    motion = exp(Twist(as_tensor(weight))).compose(frame)
    return apply_warp(scene.dynamic_set(), AffineWarp.from_pose(motion))
