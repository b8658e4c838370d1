"""
Synthetic blurry-video generator with known ground truth.

A textured wall of static Gaussians sits behind a rigid object of dynamic
Gaussians that drifts across the view. The camera follows a slow pan and
shakes during every exposure. Blurry frames come from the same subframe
average the trainer uses, at a much higher subframe count. Initial poses are
the ground truth perturbed by a random twist, standing in for SfM error.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch

import utils

from .base import DTYPE, DatasetFormatError, SpecError, as_tensor
from .blur import ExposureSpec, synthesize_blur
from .metrics import select_sharpest
from .render import Camera, RenderSettings, render
from .scene import GaussianSet, SceneModel, deform_dynamic
from .se3 import Pose, Rotation, Twist, exp, quat_canonical, quat_normalize

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
# static wall half-extent; pose noise and shake translations are fractions of it
SCENE_RADIUS = 1.5
WALL_DEPTH = 4.5
OBJECT_DEPTH = 3.0


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    frames: int = 24
    width: int = 64
    height: int = 64
    static_gaussians: int = 80
    dynamic_gaussians: int = 16
    shake_rotation_deg: float = 0.4
    shake_translation: float = 0.01
    object_speed: float = 0.05
    object_spin_deg: float = 2.0
    rotation_noise_deg: float = 1.0
    translation_noise: float = 0.01
    point_noise: float = 0.01
    gt_subframes: int = 64
    exposure: float = 0.5
    focal: Optional[float] = None
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.frames < 2:
            raise SpecError(f"need at least 2 frames, got {self.frames}")
        if self.width < 1 or self.height < 1:
            raise SpecError(f"image size must be positive, got {self.width}x{self.height}")
        if self.static_gaussians < 0 or self.dynamic_gaussians < 0:
            raise SpecError("Gaussian counts must be >= 0")
        if self.static_gaussians + self.dynamic_gaussians == 0:
            raise SpecError("scene has no Gaussians")
        for name in ("shake_rotation_deg", "shake_translation", "object_speed", "object_spin_deg",
                     "rotation_noise_deg", "translation_noise", "point_noise"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.gt_subframes < 1:
            raise SpecError(f"gt_subframes must be >= 1, got {self.gt_subframes}")
        if not 0.0 < self.exposure <= 1.0:
            raise SpecError(f"exposure must be in (0, 1], got {self.exposure}")

    def camera(self) -> Camera:
        return Camera.centered(self.width, self.height, self.focal or float(self.width))

    @classmethod
    def from_dict(cls, values: dict) -> "SyntheticSpec":
        values = dict(values)
        if "background" in values:
            values["background"] = tuple(values["background"])
        try:
            return cls(**values)
        except TypeError as e:
            raise SpecError(f"bad synthetic spec: {e}") from e


@dataclass
class FrameObservation:
    t: int
    blurry: Optional[torch.Tensor]
    sharp_gt: Optional[torch.Tensor]
    static_gt: Optional[torch.Tensor]
    gt_pose: Optional[Pose]
    init_pose: Pose
    exposure: float = 1.0


@dataclass
class SyntheticDataset:
    camera: Camera
    frames: Dict[int, FrameObservation]
    spec: Optional[SyntheticSpec] = None
    static_points: torch.Tensor = field(default_factory=lambda: torch.zeros(0, 3, dtype=DTYPE))
    dynamic_tracks: Dict[int, torch.Tensor] = field(default_factory=dict)

    @property
    def timestamps(self) -> List[int]:
        return sorted(self.frames)


def _random_rotations(count: int, gen: torch.Generator) -> torch.Tensor:
    return quat_canonical(quat_normalize(torch.randn(count, 4, generator=gen, dtype=DTYPE)))


def _uniform(shape, low: float, high: float, gen: torch.Generator) -> torch.Tensor:
    return low + (high - low) * torch.rand(shape, generator=gen, dtype=DTYPE)


def _wall(count: int, gen: torch.Generator) -> GaussianSet:
    if count == 0:
        return GaussianSet.empty()
    xy = _uniform((count, 2), -SCENE_RADIUS, SCENE_RADIUS, gen)
    z = WALL_DEPTH + _uniform((count, 1), -0.3, 0.3, gen)
    opacity = _uniform(count, 0.6, 0.95, gen)
    return GaussianSet(
        means=torch.cat([xy, z], dim=1),
        log_scales=torch.log(_uniform((count, 3), 0.08, 0.25, gen)),
        rotations=_random_rotations(count, gen),
        opacity_logits=torch.log(opacity / (1 - opacity)),
        colors=_uniform((count, 3), 0.1, 0.9, gen),
        sh=0.05 * torch.randn(count, 3, 3, generator=gen, dtype=DTYPE),
    )


def _object(count: int, gen: torch.Generator) -> GaussianSet:
    """Canonical object centred at the origin"""
    if count == 0:
        return GaussianSet.empty()
    opacity = _uniform(count, 0.8, 0.98, gen)
    base = _uniform((1, 3), 0.5, 1.0, gen)
    return GaussianSet(
        means=0.25 * torch.randn(count, 3, generator=gen, dtype=DTYPE),
        log_scales=torch.log(_uniform((count, 3), 0.04, 0.1, gen)),
        rotations=_random_rotations(count, gen),
        opacity_logits=torch.log(opacity / (1 - opacity)),
        colors=(base + _uniform((count, 3), -0.2, 0.0, gen)).clamp(0.0, 1.0),
        sh=0.05 * torch.randn(count, 3, 3, generator=gen, dtype=DTYPE),
    )


def perturb_pose(pose: Pose, rotation_sigma_deg: float, translation_sigma: float,
                 gen: torch.Generator) -> Pose:
    """exp(noise) o pose; rotation angle |N(0, sigma)| about a uniform axis, translation N(0, sigma) per axis"""
    axis = torch.randn(3, generator=gen, dtype=DTYPE)
    axis = axis / torch.linalg.norm(axis)
    angle = abs(float(torch.randn(1, generator=gen, dtype=DTYPE))) * math.radians(rotation_sigma_deg)
    v = translation_sigma * torch.randn(3, generator=gen, dtype=DTYPE)
    return exp(Twist(torch.cat([axis * angle, v]))).compose(pose)


def _camera_path(spec: SyntheticSpec) -> List[Pose]:
    """Slow pan: centre drifts along x while the camera yaws slightly"""
    poses = []
    for k in range(spec.frames):
        f = k / (spec.frames - 1) - 0.5
        rotation = Rotation.from_axis_angle(torch.tensor([0.0, math.radians(3.0) * f, 0.0], dtype=DTYPE))
        center = torch.tensor([0.2 * f, 0.05 * f, 0.0], dtype=DTYPE)
        poses.append(Pose(rotation, -rotation.apply(center)))
    return poses


@torch.no_grad()
def generate(spec: SyntheticSpec) -> Tuple[SyntheticDataset, SceneModel]:
    """Deterministic dataset and ground-truth scene for a spec"""
    gen = torch.Generator().manual_seed(spec.seed)
    cam = spec.camera()
    settings = RenderSettings(background=spec.background)
    timestamps = list(range(spec.frames))
    gt_poses = _camera_path(spec)

    static = _wall(spec.static_gaussians, gen)
    dynamic = _object(spec.dynamic_gaussians, gen)
    scene = SceneModel(static, dynamic, timestamps, gt_poses)

    # object drifts along x across the sequence, spinning about its own z axis
    spin = math.radians(spec.object_spin_deg)
    x0 = -0.5 * spec.object_speed * (spec.frames - 1)
    # per-exposure motion is spread from +w/2 (start) to -w/2 (end)
    travel = spec.object_speed * spec.exposure
    shake_rot = math.radians(spec.shake_rotation_deg)
    shake_trans = spec.shake_translation * SCENE_RADIUS
    for i, t in enumerate(timestamps):
        scene.deform_rotations[i] = Rotation.from_axis_angle(torch.tensor([0.0, 0.0, spin * t], dtype=DTYPE)).quat
        scene.deform_translations[i] = torch.tensor([x0 + spec.object_speed * t, 0.1, OBJECT_DEPTH], dtype=DTYPE)
        scene.exposure_weights[i] = torch.tensor([0.0, 0.0, 0.0, -travel, 0.0, 0.0], dtype=DTYPE)
        shake = torch.cat([shake_rot * torch.randn(3, generator=gen, dtype=DTYPE),
                           shake_trans * torch.randn(3, generator=gen, dtype=DTYPE)])
        scene.camera_start[i] = -0.5 * shake
        scene.camera_end[i] = 0.5 * shake

    exposure = ExposureSpec(subframes=spec.gt_subframes)
    frames, tracks = {}, {}
    points = static.means + spec.point_noise * torch.randn(len(static), 3, generator=gen, dtype=DTYPE)
    for t, gt_pose in zip(timestamps, gt_poses):
        moved = deform_dynamic(scene, t)
        frames[t] = FrameObservation(
            t=t,
            blurry=synthesize_blur(scene, cam, t, exposure, settings),
            sharp_gt=render(scene.static_set().concat(moved), cam, gt_pose, settings),
            static_gt=render(scene.static_set(), cam, gt_pose, settings),
            gt_pose=gt_pose,
            init_pose=perturb_pose(gt_pose, spec.rotation_noise_deg,
                                   spec.translation_noise * SCENE_RADIUS, gen),
            exposure=spec.exposure,
        )
        if len(moved):
            tracks[t] = moved.means + spec.point_noise * torch.randn(len(moved), 3, generator=gen, dtype=DTYPE)

    logger.info("Generated %d frames (%dx%d), %d static + %d dynamic Gaussians, seed %d",
                spec.frames, spec.width, spec.height, len(static), len(dynamic), spec.seed)
    dataset = SyntheticDataset(cam, frames, spec, points, tracks)
    return dataset, scene


def initial_scene(dataset: SyntheticDataset, opacity: float = 0.3) -> SceneModel:
    """Scene seeded from the sparse points, canonical dynamic frame = sharpest blurry input"""
    timestamps = dataset.timestamps
    blurry = [dataset.frames[t].blurry for t in timestamps]
    canonical = timestamps[select_sharpest(blurry, 1)[0]] if all(b is not None for b in blurry) else timestamps[0]
    tracks = dataset.dynamic_tracks if canonical in dataset.dynamic_tracks else {}
    return SceneModel.from_points(dataset.static_points, tracks, canonical,
                                  {t: dataset.frames[t].init_pose for t in timestamps}, opacity=opacity)


# ---------------------------------------------------------------- disk layout
def _frame_files(t: int) -> Dict[str, str]:
    return {kind: f"frames/{t:04d}_{kind}.pfm" for kind in ("blurry", "sharp", "static")}


def export(dataset: SyntheticDataset, directory, gt_scene: Optional[SceneModel] = None) -> Path:
    directory = Path(directory)
    if not directory.parent.exists():
        raise DatasetFormatError("parent directory does not exist", directory.parent)
    (directory / "frames").mkdir(parents=True, exist_ok=True)

    entries = []
    for t in dataset.timestamps:
        frame = dataset.frames[t]
        files = _frame_files(t)
        for kind, image in (("blurry", frame.blurry), ("sharp", frame.sharp_gt), ("static", frame.static_gt)):
            if image is None:
                files.pop(kind)
            else:
                utils.write_pfm(directory / files[kind], image)
        entries.append({"t": t, "exposure": frame.exposure, **files})

    utils.write_poses(directory / "poses_init.txt", [dataset.frames[t].init_pose for t in dataset.timestamps])
    gt = [dataset.frames[t].gt_pose for t in dataset.timestamps]
    if all(p is not None for p in gt):
        utils.write_poses(directory / "poses_gt.txt", gt)
    utils.write_points(directory / "points.txt", dataset.static_points, dataset.dynamic_tracks)
    utils.write_json(directory / "manifest.json", {
        "format_version": FORMAT_VERSION,
        "frames": entries,
        "camera": dataset.camera.to_dict(),
        "spec": asdict(dataset.spec) if dataset.spec is not None else None,
    })
    if gt_scene is not None:
        utils.save_checkpoint(directory / "gt_scene.ckpt", gt_scene, epoch=0)
    logger.info("Exported %d frames to %s", len(entries), directory)
    return directory


def import_dataset(directory) -> SyntheticDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError("manifest not found", manifest_path)
    manifest = utils.read_json(manifest_path)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"format_version {version!r}, expected {FORMAT_VERSION}", manifest_path)
    try:
        camera = Camera(**manifest["camera"])
        entries = manifest["frames"]
    except (KeyError, TypeError) as e:
        raise DatasetFormatError(f"malformed manifest: {e}", manifest_path) from e

    init = utils.read_poses(directory / "poses_init.txt")
    gt_path = directory / "poses_gt.txt"
    gt = utils.read_poses(gt_path) if gt_path.exists() else [None] * len(entries)
    if len(init) != len(entries) or len(gt) != len(entries):
        raise DatasetFormatError(f"{len(entries)} frames but {len(init)} initial / {len(gt)} gt poses", directory)

    def load(entry, kind):
        return as_tensor(utils.read_pfm(directory / entry[kind])) if kind in entry else None

    frames = {}
    for entry, init_pose, gt_pose in zip(entries, init, gt):
        t = int(entry["t"])
        frames[t] = FrameObservation(t, load(entry, "blurry"), load(entry, "sharp"), load(entry, "static"),
                                     gt_pose, init_pose, float(entry.get("exposure", 1.0)))
    points_path = directory / "points.txt"
    static_points, tracks = (utils.read_points(points_path) if points_path.exists()
                             else (torch.zeros(0, 3, dtype=DTYPE), {}))
    spec = SyntheticSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
    return SyntheticDataset(camera, frames, spec, static_points, tracks)
