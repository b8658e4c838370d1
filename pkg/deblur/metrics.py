"""
Image and pose quality measures
"""

import math
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .base import DTYPE, ImageShapeError, SpecError, as_tensor
from .se3 import Pose

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# Rec. 709
LUMA = (0.2126, 0.7152, 0.0722)


def _pair(a, b) -> Tuple[torch.Tensor, torch.Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ImageShapeError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 2:
        a, b = a[..., None], b[..., None]
    if a.dim() != 3:
        raise ImageShapeError(f"expected (height, width, channels) images, got {tuple(a.shape)}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; identical images give PSNR_CAP"""
    a, b = _pair(a, b)
    err = float(torch.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    x = torch.arange(size, dtype=DTYPE) - (size - 1) / 2.0
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM over the valid window positions, averaged over channels"""
    a, b = _pair(a, b)
    height, width, channels = a.shape
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ImageShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {height}x{width}")

    window = _gaussian_window()[None, None].repeat(channels, 1, 1, 1)
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]

    def blur(z):
        return F.conv2d(z, window, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(index.mean(dim=(0, 2, 3)).mean())


def pose_error(estimate: Pose, truth: Pose) -> Tuple[float, float]:
    """Geodesic angle of R_est R_gt^T in degrees and the distance between camera centres"""
    delta = estimate.rotation.compose(truth.rotation.inverse())
    angle = math.degrees(float(delta.angle()))
    distance = float(torch.linalg.norm(estimate.camera_center() - truth.camera_center()))
    return angle, distance


def luminance(image) -> torch.Tensor:
    image = as_tensor(image)
    if image.dim() == 2:
        return image
    if image.shape[-1] != 3:
        raise ImageShapeError(f"expected RGB image, got {tuple(image.shape)}")
    return image @ torch.tensor(LUMA, dtype=DTYPE)


def laplacian_sharpness(image) -> float:
    """Population variance of the 3x3 Laplacian of the luminance, replicate-padded"""
    y = luminance(image)[None, None]
    kernel = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=DTYPE)[None, None]
    response = F.conv2d(F.pad(y, (1, 1, 1, 1), mode="replicate"), kernel)
    return float(response.var(unbiased=False))


def select_sharpest(images: Sequence, segments: int = 1) -> List[int]:
    """Index of the sharpest image in each of `segments` contiguous, near-equal runs"""
    if segments < 1 or segments > len(images):
        raise SpecError(f"cannot split {len(images)} images into {segments} segments")
    scores = np.array([laplacian_sharpness(img) for img in images])
    picks = []
    for run in np.array_split(np.arange(len(images)), segments):
        # first maximum wins ties
        picks.append(int(run[np.argmax(scores[run])]))
    return picks
