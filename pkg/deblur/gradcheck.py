"""
Central finite-difference check of the reverse pass, one row per parameter class.

The objective is loss_total on a tiny scene (3 static and 2 dynamic Gaussians,
16x16 pixels, N = 3) against fixed random targets, so every learnable class
takes part: geometry and appearance of both sets, the per-frame deformation,
the exposure weight and both camera twists.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch

from .base import DTYPE, SpecError
from .blur import ExposureSpec
from .data_synth import FrameObservation
from .optim import loss_total
from .render import Camera, RenderSettings, record_forward, render_backward
from .scene import PARAMETER_CLASSES, GaussianSet, SceneModel
from .se3 import Pose, Rotation, quat_canonical, quat_normalize

logger = logging.getLogger(__name__)

STEP = 1e-4
TOLERANCE = 1e-3
TINY = 1e-30


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    analytic_norm: float
    numeric_norm: float
    rel_error: float
    passed: bool


def _gaussians(count: int, center: Tuple[float, float, float], spread: float, gen: torch.Generator) -> GaussianSet:
    means = torch.tensor(center, dtype=DTYPE) + spread * (2 * torch.rand(count, 3, generator=gen, dtype=DTYPE) - 1)
    opacity = 0.35 + 0.3 * torch.rand(count, generator=gen, dtype=DTYPE)
    return GaussianSet(
        means=means,
        log_scales=torch.log(0.15 + 0.1 * torch.rand(count, 3, generator=gen, dtype=DTYPE)),
        rotations=quat_canonical(quat_normalize(
            torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE) + 0.3 * torch.randn(count, 4, generator=gen, dtype=DTYPE))),
        opacity_logits=torch.log(opacity / (1 - opacity)),
        # colours kept well inside (0, 1) so the clamp never binds
        colors=0.3 + 0.4 * torch.rand(count, 3, generator=gen, dtype=DTYPE),
        sh=0.05 * torch.randn(count, 3, 3, generator=gen, dtype=DTYPE),
    )


def build_problem(seed: int = 0, size: int = 16, static: int = 3, dynamic: int = 2,
                  subframes: int = 3) -> Tuple[SceneModel, Camera, ExposureSpec, Dict[int, FrameObservation]]:
    """Small scene with nonzero twists and exposure weight, plus random targets for one frame"""
    if static + dynamic == 0:
        raise SpecError("gradient check needs at least one Gaussian")
    gen = torch.Generator().manual_seed(seed)
    cam = Camera.centered(size, size, focal=float(size))
    pose = Pose(Rotation.from_axis_angle(torch.tensor([0.02, -0.03, 0.01], dtype=DTYPE)),
                torch.tensor([0.05, -0.02, 0.1], dtype=DTYPE))
    scene = SceneModel(_gaussians(static, (0.0, 0.0, 4.0), 0.6, gen),
                       _gaussians(dynamic, (0.0, 0.0, 0.0), 0.3, gen), [0], [pose])
    with torch.no_grad():
        scene.deform_rotations[0] = Rotation.from_axis_angle(torch.tensor([0.0, 0.05, 0.1], dtype=DTYPE)).quat
        scene.deform_translations[0] = torch.tensor([0.1, 0.05, 3.0], dtype=DTYPE)
        scene.exposure_weights[0] = 0.02 * torch.randn(6, generator=gen, dtype=DTYPE)
        scene.camera_start[0] = 0.01 * torch.randn(6, generator=gen, dtype=DTYPE)
        scene.camera_end[0] = 0.01 * torch.randn(6, generator=gen, dtype=DTYPE)
    targets = torch.rand(2, size, size, 3, generator=gen, dtype=DTYPE)
    frames = {0: FrameObservation(0, targets[0], None, targets[1], None, pose)}
    return scene, cam, ExposureSpec(subframes=subframes), frames


def _flatten(tensors: List[torch.Tensor]) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for t in tensors]) if tensors else torch.zeros(0, dtype=DTYPE)


def numeric_gradient(objective, parameter: torch.Tensor, step: float = STEP) -> torch.Tensor:
    """Central differences, one element at a time"""
    grad = torch.zeros_like(parameter)
    flat, out = parameter.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + step
        plus = float(objective())
        flat[i] = original - step
        minus = float(objective())
        flat[i] = original
        out[i] = (plus - minus) / (2 * step)
    return grad


def run_gradcheck(seed: int = 0, size: int = 16, step: float = STEP, tolerance: float = TOLERANCE,
                  corrupt: Optional[str] = None, corrupt_factor: float = 1.5) -> List[GradcheckResult]:
    """Compare analytic and numeric gradients for every parameter class.

    corrupt scales the analytic gradient of one class, which must then fail.
    """
    if corrupt is not None and corrupt not in PARAMETER_CLASSES:
        raise SpecError(f"unknown parameter class {corrupt!r}")
    scene, cam, spec, frames = build_problem(seed, size)
    settings = RenderSettings()

    def objective():
        return loss_total(scene, cam, 0, spec, frames, settings)

    inputs = dict(scene.named_parameters())
    analytic = render_backward(record_forward(objective(), inputs), torch.ones((), dtype=DTYPE))

    results = []
    with torch.no_grad():
        for name, members in PARAMETER_CLASSES.items():
            a = _flatten([analytic[m] for m in members])
            if name == corrupt:
                a = a * corrupt_factor
            f = _flatten([numeric_gradient(objective, inputs[m], step) for m in members])
            a_norm, f_norm = float(torch.linalg.norm(a)), float(torch.linalg.norm(f))
            rel = float(torch.linalg.norm(a - f)) / max(a_norm, f_norm, TINY)
            passed = math.isfinite(rel) and rel < tolerance
            results.append(GradcheckResult(name, a_norm, f_norm, rel, passed))
            logger.info("gradcheck %-16s |analytic|=%.3e |numeric|=%.3e rel=%.2e %s",
                        name, a_norm, f_norm, rel, "ok" if passed else "FAIL")
    return results
