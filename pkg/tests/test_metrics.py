import math

import numpy as np
import pytest
import torch
from scipy.ndimage import gaussian_filter
from skimage.metrics import structural_similarity

from deblur.base import DTYPE, ImageShapeError, SpecError
from deblur.metrics import PSNR_CAP, laplacian_sharpness, luminance, pose_error, psnr, select_sharpest, ssim
from deblur.se3 import Pose, Rotation, Twist, exp
from tests.conftest import random_pose


def _image(seed: int, shape=(24, 20, 3)) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=shape)


def _sharpness_oracle(image: np.ndarray) -> float:
    y = image @ np.array([0.2126, 0.7152, 0.0722])
    p = np.pad(y, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * p[1:-1, 1:-1]
    return float(lap.var())


# ---------------------------------------------------------------------- PSNR
def test_identical_images_hit_the_psnr_cap():
    image = _image(0)
    assert psnr(image, image) == PSNR_CAP == 100.0


def test_uniform_offset_psnr():
    image = np.full((8, 8, 3), 0.4)
    assert psnr(image, image + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_rejects_mismatched_shapes():
    with pytest.raises(ImageShapeError):
        psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


# ---------------------------------------------------------------------- SSIM
def test_identical_images_have_unit_ssim():
    image = _image(1)
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-12)


def test_constant_images():
    half = np.full((16, 16, 3), 0.5)
    assert ssim(half, 1.0 - half) == pytest.approx(1.0, abs=1e-12)
    assert ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3))) < 0.1


def test_ssim_matches_scikit_image():
    for seed in range(3):
        a = _image(seed)
        b = np.clip(a + np.random.default_rng(seed + 10).normal(0, 0.1, size=a.shape), 0, 1)
        b = gaussian_filter(b, sigma=(0.7, 0.7, 0))
        expected = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                         data_range=1.0, channel_axis=2)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-6)


def test_ssim_needs_a_full_window():
    with pytest.raises(ImageShapeError):
        ssim(np.zeros((10, 32, 3)), np.zeros((10, 32, 3)))


def test_ssim_accepts_tensors_and_grayscale():
    a = torch.tensor(_image(4, (12, 12)), dtype=DTYPE)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------------------ poses
def test_pose_error_of_identical_poses():
    pose = random_pose(np.random.default_rng(0))
    rot, trans = pose_error(pose, pose)
    assert rot == pytest.approx(0.0, abs=1e-6) and trans == pytest.approx(0.0, abs=1e-12)


def test_quarter_turn_offset():
    t = torch.tensor([1.0, 2.0, 0.5], dtype=DTYPE)
    quarter = Rotation.from_axis_angle(torch.tensor([0.0, 0.0, math.pi / 2], dtype=DTYPE))
    truth, estimate = Pose(Rotation.identity(), t), Pose(quarter, t)
    rot, trans = pose_error(estimate, truth)
    assert rot == pytest.approx(90.0, abs=1e-9)
    expected_shift = float(torch.linalg.norm(estimate.camera_center() - truth.camera_center()))
    assert trans == pytest.approx(expected_shift, abs=1e-12)
    assert trans == pytest.approx(float(torch.linalg.norm(quarter.inverse().apply(t) - t)), abs=1e-12)


def test_small_twist_perturbation_error_equals_its_angle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        truth = random_pose(rng)
        xi = np.concatenate([rng.normal(scale=0.01, size=3), np.zeros(3)])
        rot, _ = pose_error(exp(Twist(torch.tensor(xi))).compose(truth), truth)
        assert rot == pytest.approx(math.degrees(np.linalg.norm(xi[:3])), abs=1e-9)


def test_pose_error_ignores_a_shared_world_frame_change():
    rng = np.random.default_rng(2)
    for _ in range(20):
        estimate, truth, gauge = random_pose(rng), random_pose(rng), random_pose(rng)
        rot, trans = pose_error(estimate, truth)
        moved_rot, moved_trans = pose_error(estimate.compose(gauge), truth.compose(gauge))
        assert moved_rot == pytest.approx(rot, abs=1e-7)
        assert moved_trans == pytest.approx(trans, abs=1e-9)


# --------------------------------------------------------------- sharpness
def test_constant_image_has_zero_sharpness():
    assert laplacian_sharpness(np.full((9, 9, 3), 0.3)) == pytest.approx(0.0, abs=1e-20)


def test_sharpness_matches_independent_laplacian():
    image = _image(5)
    assert laplacian_sharpness(image) == pytest.approx(_sharpness_oracle(image), rel=1e-12)


def test_luminance_weights():
    pixel = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    np.testing.assert_allclose(luminance(pixel).numpy(), [[0.2126, 0.7152, 0.0722]], atol=1e-15)
    with pytest.raises(ImageShapeError):
        luminance(np.zeros((4, 4, 2)))


def test_blurring_lowers_sharpness():
    image = _image(6)
    assert laplacian_sharpness(gaussian_filter(image, sigma=(1.5, 1.5, 0))) < laplacian_sharpness(image)


def test_select_sharpest_picks_the_crisp_frame_per_segment():
    crisp = _image(7)
    soft = gaussian_filter(crisp, sigma=(2, 2, 0))
    frames = [soft, soft, crisp, soft, crisp, soft]
    assert select_sharpest(frames) == [2]
    assert select_sharpest(frames, segments=2) == [2, 4]
    # ties go to the first maximum
    assert select_sharpest([crisp, crisp], segments=1) == [0]


@pytest.mark.parametrize("segments", [0, 7])
def test_select_sharpest_rejects_bad_segment_counts(segments):
    with pytest.raises(SpecError):
        select_sharpest([_image(8)] * 6, segments=segments)
