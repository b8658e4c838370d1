import math

import numpy as np
import pytest
import torch

from deblur.base import DTYPE
from deblur.data_synth import SyntheticSpec, generate
from deblur.render import Camera
from deblur.scene import GaussianSet
from deblur.se3 import Pose, Rotation, Twist, exp, quat_canonical, quat_normalize


def random_gaussians(count: int, seed: int = 0, depth: float = 4.0, spread: float = 1.0,
                     sh_scale: float = 0.1) -> GaussianSet:
    """Gaussians in front of a camera at the origin looking along +z"""
    gen = torch.Generator().manual_seed(seed)
    means = torch.empty(count, 3, dtype=DTYPE)
    means[:, :2] = spread * (2 * torch.rand(count, 2, generator=gen, dtype=DTYPE) - 1)
    means[:, 2] = depth + 0.5 * (2 * torch.rand(count, generator=gen, dtype=DTYPE) - 1)
    opacity = 0.2 + 0.7 * torch.rand(count, generator=gen, dtype=DTYPE)
    return GaussianSet(
        means=means,
        log_scales=torch.log(0.08 + 0.2 * torch.rand(count, 3, generator=gen, dtype=DTYPE)),
        rotations=quat_canonical(quat_normalize(torch.randn(count, 4, generator=gen, dtype=DTYPE))),
        opacity_logits=torch.log(opacity / (1 - opacity)),
        colors=0.1 + 0.8 * torch.rand(count, 3, generator=gen, dtype=DTYPE),
        sh=sh_scale * torch.randn(count, 3, 3, generator=gen, dtype=DTYPE),
    )


def random_pose(rng: np.random.Generator, max_angle: float = math.pi * 0.9, max_shift: float = 2.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    omega = axis * rng.uniform(0, max_angle)
    t = rng.uniform(-max_shift, max_shift, size=3)
    return Pose(Rotation.from_axis_angle(torch.tensor(omega, dtype=DTYPE)), torch.tensor(t, dtype=DTYPE))


def small_pose(rng: np.random.Generator, angle: float = 0.05, shift: float = 0.1) -> Pose:
    """Camera near the identity so random Gaussians at z ~ 4 stay in view"""
    xi = np.concatenate([rng.normal(scale=angle, size=3), rng.normal(scale=shift, size=3)])
    return exp(Twist(torch.tensor(xi, dtype=DTYPE)))


def assert_pose_close(a: Pose, b: Pose, atol: float = 1e-9):
    np.testing.assert_allclose(a.rotation.matrix().detach().numpy(), b.rotation.matrix().detach().numpy(), atol=atol)
    np.testing.assert_allclose(a.translation.detach().numpy(), b.translation.detach().numpy(), atol=atol)


@pytest.fixture
def camera():
    return Camera.centered(24, 24, focal=24.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_spec():
    return SyntheticSpec(seed=3, frames=3, width=16, height=16, static_gaussians=12, dynamic_gaussians=3,
                         gt_subframes=5)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return generate(tiny_spec)
