"""
Exposure blur as the average of N latent sharp subframes.

The camera moves along the geodesic between exp(start) o P0 and exp(end) o P0.
Instead of moving the camera, each subframe moves the Gaussians by the warp
that maps the subframe view onto the fixed reference view, so all N renders
share one viewpoint.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import torch

from .base import DTYPE, SpecError
from .render import Camera, RenderSettings, render
from .scene import GaussianSet, SceneModel, apply_warp, deform_dynamic, subframe_weight
from .se3 import Pose, Twist, exp, interpolate_pose, relative_warp

logger = logging.getLogger(__name__)

SUBFRAME_CHOICES = ("start", "middle", "end")


@dataclass(frozen=True)
class ExposureSpec:
    """Subframe layout of one exposure.

    exposure is the open-shutter fraction of the frame interval. It does not
    rescale subframe poses: the start/end twists are the motion over the whole
    exposure, so a shorter exposure shows up as smaller twists (and smaller w_t).
    The generator uses it to size intra-exposure object travel.
    """
    subframes: int = 7
    exposure: float = 1.0
    # 1-based; None means ceil(N / 2)
    reference: Optional[int] = None

    def __post_init__(self):
        if self.subframes < 1:
            raise SpecError(f"subframe count must be >= 1, got {self.subframes}")
        if not 0.0 < self.exposure <= 1.0:
            raise SpecError(f"exposure must be in (0, 1], got {self.exposure}")
        if self.reference is not None and not 1 <= self.reference <= self.subframes:
            raise SpecError(f"reference subframe {self.reference} outside 1..{self.subframes}")

    @property
    def reference_index(self) -> int:
        """0-based position of the reference subframe"""
        n = self.reference if self.reference is not None else (self.subframes + 1) // 2
        return n - 1

    def choice_index(self, choice: str) -> int:
        if choice == "start":
            return 0
        if choice == "middle":
            return (self.subframes + 1) // 2 - 1
        if choice == "end":
            return self.subframes - 1
        raise SpecError(f"subframe choice must be one of {SUBFRAME_CHOICES}, got {choice!r}")


def subframe_poses(initial: Pose, start_twist: Twist, end_twist: Twist, spec: ExposureSpec) -> List[Pose]:
    pose_start = exp(start_twist).compose(initial)
    pose_end = exp(end_twist).compose(initial)
    n = spec.subframes
    if n == 1:
        return [interpolate_pose(pose_start, pose_end, 0.5)]
    return [interpolate_pose(pose_start, pose_end, m / (n - 1)) for m in range(n)]


def frame_poses(scene: SceneModel, t: int, spec: ExposureSpec) -> List[Pose]:
    start, end = scene.camera_twists(t)
    return subframe_poses(scene.initial_pose(t), start, end, spec)


def reference_pose(scene: SceneModel, t: int, spec: ExposureSpec) -> Pose:
    """P_t: the reference subframe pose of frame t"""
    return frame_poses(scene, t, spec)[spec.reference_index]


def subframe_gaussians(scene: SceneModel, t: int, m: int, spec: ExposureSpec) -> GaussianSet:
    """Static set plus the dynamic set at subframe m (0-based), in world coordinates"""
    weight = subframe_weight(scene.exposure_weight(t), m + 1, spec.subframes)
    return scene.static_set().concat(deform_dynamic(scene, t, weight))


def synthesize_blur(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec,
                    settings: Optional[RenderSettings] = None, warp_subframes: bool = True) -> torch.Tensor:
    """Mean of the N subframe renders, summed in subframe order.

    With warp_subframes the Gaussians are warped onto the reference view;
    otherwise every subframe is rendered from its own pose. Both give the same
    image up to rounding.
    """
    poses = frame_poses(scene, t, spec)
    ref = poses[spec.reference_index]
    total = torch.zeros(cam.height, cam.width, 3, dtype=DTYPE)
    for m, pose in enumerate(poses):
        gaussians = subframe_gaussians(scene, t, m, spec)
        if warp_subframes:
            image = render(apply_warp(gaussians, relative_warp(pose, ref)), cam, ref, settings)
        else:
            image = render(gaussians, cam, pose, settings)
        total = total + image
    return total / spec.subframes


def render_sharp(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec, choice: str = "middle",
                 settings: Optional[RenderSettings] = None) -> torch.Tensor:
    """One latent sharp subframe (start, middle or end of the exposure)"""
    m = spec.choice_index(choice)
    poses = frame_poses(scene, t, spec)
    return render(subframe_gaussians(scene, t, m, spec), cam, poses[m], settings)


def render_static(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec,
                  settings: Optional[RenderSettings] = None) -> torch.Tensor:
    """Static Gaussians alone at the frame pose P_t, no blur"""
    return render(scene.static_set(), cam, reference_pose(scene, t, spec), settings)
