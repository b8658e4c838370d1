"""
Differentiable pinhole splatting renderer.

Gaussians are projected with the first-order EWA approximation, sorted by
(depth, original index) and alpha-composited front to back over a declared
background. Everything is plain torch, so the reverse pass is the analytic
chain rule through projection, compositing and whatever produced the inputs
(warps, deformations, blur averaging).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import torch

from .base import DTYPE, GradientStateError, NonFiniteError, SpecError, as_tensor
from .scene import GaussianSet, evaluate_color
from .se3 import Pose

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics; pixel (i, j) is sampled at (i + 0.5, j + 0.5)"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SpecError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise SpecError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if self.near <= 0:
            raise SpecError(f"near plane must be positive, got {self.near}")

    @classmethod
    def centered(cls, width: int, height: int, focal: float, near: float = 0.01) -> "Camera":
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, near)

    def pixel_centers(self) -> torch.Tensor:
        """(height * width, 2) sample positions in row-major order"""
        ys, xs = torch.meshgrid(torch.arange(self.height, dtype=DTYPE) + 0.5,
                                torch.arange(self.width, dtype=DTYPE) + 0.5, indexing="ij")
        return torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=-1)

    def to_dict(self) -> Dict[str, float]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "near": self.near}


@dataclass(frozen=True)
class RenderSettings:
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    dilation: float = 0.3
    cull_sigma: float = 3.0
    transmittance_eps: float = 1e-4
    # pixels composited per chunk; the image does not depend on it
    tile_pixels: int = 4096

    def background_tensor(self) -> torch.Tensor:
        return torch.tensor(self.background, dtype=DTYPE)


@dataclass(frozen=True)
class SplatBatch:
    """Projected splats; index holds each splat's position in the input Gaussian list"""
    means2d: torch.Tensor
    cov2d: torch.Tensor
    depths: torch.Tensor
    colors: torch.Tensor
    opacities: torch.Tensor
    index: torch.Tensor

    def __len__(self) -> int:
        return int(self.depths.shape[0])


def _projection_jacobian(p_cam: torch.Tensor, cam: Camera) -> torch.Tensor:
    x, y, z = p_cam.unbind(-1)
    zero = torch.zeros_like(z)
    row0 = torch.stack([cam.fx / z, zero, -cam.fx * x / (z * z)], dim=-1)
    row1 = torch.stack([zero, cam.fy / z, -cam.fy * y / (z * z)], dim=-1)
    return torch.stack([row0, row1], dim=-2)


_GAUSSIAN_FIELDS = ("means", "log_scales", "rotations", "opacity_logits", "colors", "sh")


def _check_finite(gaussians: GaussianSet, pose: Pose) -> None:
    # NaN fails every culling comparison, so it has to be caught before culling
    for name in _GAUSSIAN_FIELDS:
        bad = ~torch.isfinite(getattr(gaussians, name).detach())
        if bad.any():
            rows = torch.nonzero(bad.reshape(bad.shape[0], -1).any(dim=1)).squeeze(-1).tolist()
            raise NonFiniteError(f"non-finite Gaussian {name} at rows {rows}")
    if not (torch.isfinite(pose.rotation.quat.detach()).all() and torch.isfinite(pose.translation.detach()).all()):
        raise NonFiniteError("non-finite camera pose")


def project(gaussians: GaussianSet, cam: Camera, pose: Pose,
            settings: Optional[RenderSettings] = None) -> SplatBatch:
    """Project to screen space, dropping Gaussians behind the near plane or outside the viewport"""
    settings = settings or RenderSettings()
    _check_finite(gaussians, pose)
    w = pose.rotation.matrix()
    p_cam = gaussians.means @ w.T + pose.translation
    front = torch.nonzero(p_cam[:, 2].detach() > cam.near).squeeze(-1)
    g = gaussians.select(front)
    p_cam = p_cam[front]

    x, y, z = p_cam.unbind(-1)
    means2d = torch.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], dim=-1)
    m = _projection_jacobian(p_cam, cam) @ w
    eye = torch.eye(2, dtype=DTYPE)
    cov2d = m @ g.covariances() @ m.transpose(-1, -2) + settings.dilation * eye

    # 3-sigma footprint against the viewport
    with torch.no_grad():
        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        mid = 0.5 * (a + c)
        lam = mid + torch.sqrt(torch.clamp(mid * mid - (a * c - b * b), min=0.0))
        radius = settings.cull_sigma * torch.sqrt(lam)
        u, v = means2d[:, 0], means2d[:, 1]
        inside = (u + radius > 0) & (u - radius < cam.width) & (v + radius > 0) & (v - radius < cam.height)
    keep = torch.nonzero(inside).squeeze(-1)

    g = g.select(keep)
    centers = pose.camera_center()
    directions = g.means - centers
    directions = directions / torch.linalg.norm(directions, dim=-1, keepdim=True)
    colors = evaluate_color(g, directions).clamp(0.0, 1.0)
    return SplatBatch(
        means2d=means2d[keep],
        cov2d=cov2d[keep],
        depths=z[keep],
        colors=colors,
        opacities=g.opacities(),
        index=front[keep],
    )


def _depth_order(splats: SplatBatch) -> torch.Tensor:
    # stable sort on original index, then stable sort on depth: ties keep index order
    by_index = torch.sort(splats.index, stable=True).indices
    by_depth = torch.sort(splats.depths.detach()[by_index], stable=True).indices
    return by_index[by_depth]


def _composite(pixels: torch.Tensor, means: torch.Tensor, conics: torch.Tensor,
               opacities: torch.Tensor, eps: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """Blending weights (P, K) and final transmittance (P,) for depth-sorted splats"""
    d = pixels[:, None, :] - means[None, :, :]
    dx, dy = d[..., 0], d[..., 1]
    power = -0.5 * (conics[:, 0] * dx * dx + 2.0 * conics[:, 1] * dx * dy + conics[:, 2] * dy * dy)
    alpha = opacities * torch.exp(power)
    ones = torch.ones_like(alpha[:, :1])
    before = torch.cumprod(torch.cat([ones, 1.0 - alpha[:, :-1]], dim=1), dim=1)
    # early out: a splat reached with transmittance below eps contributes nothing
    live = (before.detach() >= eps).to(alpha.dtype)
    weights = alpha * before * live
    remaining = torch.prod(1.0 - alpha * live, dim=1)
    return weights, remaining


def _sorted_inputs(splats: SplatBatch):
    order = _depth_order(splats)
    cov = splats.cov2d[order]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conics = torch.stack([c / det, -b / det, a / det], dim=-1)
    return splats.means2d[order], conics, splats.opacities[order], splats.colors[order]


def compositing_weights(splats: SplatBatch, cam: Camera,
                        settings: Optional[RenderSettings] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel weights alpha_i * prod(1 - alpha_j) in depth order and the leftover transmittance"""
    settings = settings or RenderSettings()
    means, conics, opacities, _ = _sorted_inputs(splats)
    return _composite(cam.pixel_centers(), means, conics, opacities, settings.transmittance_eps)


def rasterize(splats: SplatBatch, cam: Camera, settings: Optional[RenderSettings] = None) -> torch.Tensor:
    """Front-to-back alpha blending of depth-sorted splats, (height, width, 3)"""
    settings = settings or RenderSettings()
    background = settings.background_tensor()
    if len(splats) == 0:
        return background.expand(cam.height, cam.width, 3).clone()
    for name in ("means2d", "cov2d", "depths", "colors", "opacities"):
        if not torch.isfinite(getattr(splats, name)).all():
            raise NonFiniteError(f"non-finite splat {name} reached the rasterizer")

    means, conics, opacities, colors = _sorted_inputs(splats)
    pixels = cam.pixel_centers()
    chunks = []
    for start in range(0, pixels.shape[0], max(1, settings.tile_pixels)):
        weights, remaining = _composite(pixels[start:start + settings.tile_pixels], means, conics,
                                        opacities, settings.transmittance_eps)
        chunks.append(weights @ colors + remaining[:, None] * background)
    return torch.cat(chunks).reshape(cam.height, cam.width, 3)


def render(gaussians: GaussianSet, cam: Camera, pose: Pose,
           settings: Optional[RenderSettings] = None) -> torch.Tensor:
    return rasterize(project(gaussians, cam, pose, settings), cam, settings)


@dataclass
class ForwardRecord:
    """Output of a forward pass together with the leaf tensors it depends on"""
    output: torch.Tensor
    inputs: Dict[str, torch.Tensor]
    consumed: bool = field(default=False)


def record_forward(output: torch.Tensor, inputs: Dict[str, torch.Tensor]) -> ForwardRecord:
    return ForwardRecord(output, dict(inputs))


def render_backward(record: Optional[ForwardRecord], upstream) -> Dict[str, torch.Tensor]:
    """Pull an image-space gradient back to every recorded input.

    Inputs the output does not depend on (culled, occluded or frozen) get zeros.
    A record can be consumed once.
    """
    if record is None or record.consumed:
        raise GradientStateError("render_backward needs a live forward record")
    if not record.output.requires_grad:
        raise GradientStateError("forward pass was run without gradient recording")
    upstream = as_tensor(upstream)
    if upstream.shape != record.output.shape:
        raise GradientStateError(
            f"upstream gradient shape {tuple(upstream.shape)} does not match output {tuple(record.output.shape)}")

    names = [n for n, t in record.inputs.items() if t.requires_grad]
    grads = torch.autograd.grad(record.output, [record.inputs[n] for n in names],
                                grad_outputs=upstream, allow_unused=True)
    record.consumed = True
    result = {n: torch.zeros_like(t) for n, t in record.inputs.items()}
    for n, g in zip(names, grads):
        if g is not None:
            result[n] = g
    return result
