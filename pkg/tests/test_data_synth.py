import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from deblur.base import DatasetFormatError, SpecError
from deblur.data_synth import (FORMAT_VERSION, SyntheticSpec, export, generate, import_dataset, initial_scene,
                               perturb_pose)
from deblur.metrics import pose_error
from deblur.render import RenderSettings, render
from deblur.scene import deform_dynamic
from deblur.se3 import Pose
from tests.conftest import random_pose

STILL = dict(seed=4, frames=2, width=16, height=16, static_gaussians=10, dynamic_gaussians=3, gt_subframes=5,
             shake_rotation_deg=0.0, shake_translation=0.0, object_speed=0.0, rotation_noise_deg=0.0,
             translation_noise=0.0)


def test_still_world_has_no_blur_and_exact_initial_poses():
    dataset, _ = generate(SyntheticSpec(**STILL))
    for frame in dataset.frames.values():
        np.testing.assert_allclose(frame.blurry.numpy(), frame.sharp_gt.numpy(), atol=1e-12)
        rot, trans = pose_error(frame.init_pose, frame.gt_pose)
        assert rot < 1e-9 and trans < 1e-12


def test_same_seed_gives_identical_datasets(tiny_spec):
    first, _ = generate(tiny_spec)
    second, _ = generate(tiny_spec)
    for t in first.timestamps:
        a, b = first.frames[t], second.frames[t]
        assert torch.equal(a.blurry, b.blurry)
        assert torch.equal(a.init_pose.to_vector(), b.init_pose.to_vector())
    assert torch.equal(first.static_points, second.static_points)


def test_different_seeds_differ(tiny_spec):
    first, _ = generate(tiny_spec)
    other, _ = generate(replace(tiny_spec, seed=tiny_spec.seed + 1))
    assert not torch.equal(first.frames[0].blurry, other.frames[0].blurry)


def test_pose_noise_has_the_requested_magnitude():
    gen = torch.Generator().manual_seed(0)
    rng = np.random.default_rng(0)
    errors = []
    for _ in range(1000):
        truth = random_pose(rng, max_angle=1.0)
        errors.append(pose_error(perturb_pose(truth, 1.0, 0.0, gen), truth)[0])
    # folded normal: mean |N(0, 1 deg)| = sqrt(2 / pi) deg
    assert 0.7 <= np.mean(errors) <= 1.3
    assert np.mean(errors) == pytest.approx(math.sqrt(2 / math.pi), abs=0.06)


def test_exposure_fraction_scales_object_travel(tiny_spec):
    _, long_scene = generate(replace(tiny_spec, exposure=0.8))
    _, short_scene = generate(replace(tiny_spec, exposure=0.2))
    torch.testing.assert_close(short_scene.exposure_weights.detach(), 0.25 * long_scene.exposure_weights.detach(),
                               atol=1e-15, rtol=0)
    assert float(long_scene.exposure_weights.abs().sum()) > 0
    dataset, _ = generate(replace(tiny_spec, exposure=0.2))
    assert all(frame.exposure == 0.2 for frame in dataset.frames.values())


def test_blurry_frames_differ_from_sharp_under_motion(tiny_dataset):
    dataset, _ = tiny_dataset
    frame = dataset.frames[1]
    assert float((frame.blurry - frame.sharp_gt).abs().max()) > 1e-3
    assert frame.blurry.shape == (16, 16, 3)


def test_static_target_equals_render_with_invisible_object(tiny_dataset):
    dataset, gt = tiny_dataset
    hidden = gt.clone()
    t = 2
    frame = dataset.frames[t]
    with torch.no_grad():
        hidden.dynamic_opacity_logits.fill_(-1e4)
        everything = hidden.static_set().concat(deform_dynamic(hidden, t))
        image = render(everything, dataset.camera, frame.gt_pose, RenderSettings())
    np.testing.assert_allclose(image.numpy(), frame.static_gt.numpy(), atol=1e-12)


def test_initial_scene_starts_from_sparse_points(tiny_dataset):
    dataset, _ = tiny_dataset
    scene = initial_scene(dataset)
    assert scene.timestamps == dataset.timestamps
    assert len(scene.static_means) == len(dataset.static_points)
    np.testing.assert_allclose(scene.dynamic_means.mean(0).detach().numpy(), np.zeros(3), atol=1e-12)
    for t in scene.timestamps:
        np.testing.assert_array_equal(scene.initial_pose(t).to_vector().numpy(),
                                      Pose.from_vector(dataset.frames[t].init_pose.to_vector()).to_vector().numpy())


@pytest.mark.parametrize("field, value", [("static_gaussians", 0), ("frames", 1), ("exposure", 0.0),
                                          ("object_speed", -1.0)])
def test_degenerate_specs_are_rejected(field, value):
    values = {"static_gaussians": 5, "dynamic_gaussians": 0, field: value}
    with pytest.raises(SpecError):
        SyntheticSpec(**values)


def test_unknown_spec_keys_are_rejected():
    with pytest.raises(SpecError):
        SyntheticSpec.from_dict({"seed": 1, "wobble": 3})


# ---------------------------------------------------------------- disk format
def test_export_import_round_trip(tiny_dataset, tmp_path):
    dataset, gt = tiny_dataset
    out = export(dataset, tmp_path / "data", gt_scene=gt)
    loaded = import_dataset(out)

    assert loaded.timestamps == dataset.timestamps
    assert loaded.camera == dataset.camera
    assert loaded.spec == dataset.spec
    for t in dataset.timestamps:
        a, b = dataset.frames[t], loaded.frames[t]
        # PFM stores float32
        np.testing.assert_array_equal(b.blurry.numpy(), a.blurry.numpy().astype(np.float32))
        np.testing.assert_array_equal(b.static_gt.numpy(), a.static_gt.numpy().astype(np.float32))
        np.testing.assert_allclose(b.init_pose.to_vector().numpy(), a.init_pose.to_vector().numpy(), atol=1e-12)
        np.testing.assert_allclose(b.gt_pose.to_vector().numpy(), a.gt_pose.to_vector().numpy(), atol=1e-12)
        assert b.exposure == a.exposure
    np.testing.assert_array_equal(loaded.static_points.numpy(), dataset.static_points.numpy())
    assert sorted(loaded.dynamic_tracks) == sorted(dataset.dynamic_tracks)
    assert (out / "gt_scene.ckpt").exists()


def test_export_is_reproducible(tiny_spec, tmp_path):
    for name in ("a", "b"):
        dataset, _ = generate(tiny_spec)
        export(dataset, tmp_path / name)
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / "frames" / "0001_blurry.pfm").read_bytes() == \
        (tmp_path / "b" / "frames" / "0001_blurry.pfm").read_bytes()


def test_import_of_empty_directory_names_the_manifest(tmp_path):
    with pytest.raises(DatasetFormatError, match="manifest.json"):
        import_dataset(tmp_path)


def test_import_rejects_other_format_versions(tiny_dataset, tmp_path):
    out = export(tiny_dataset[0], tmp_path / "data")
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["format_version"] = FORMAT_VERSION + 1
    (out / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match="format_version"):
        import_dataset(out)


def test_import_rejects_pose_count_mismatch(tiny_dataset, tmp_path):
    out = export(tiny_dataset[0], tmp_path / "data")
    lines = (out / "poses_init.txt").read_text().splitlines()
    (out / "poses_init.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DatasetFormatError):
        import_dataset(out)


def test_export_needs_an_existing_parent(tiny_dataset, tmp_path):
    with pytest.raises(DatasetFormatError):
        export(tiny_dataset[0], tmp_path / "missing" / "data")
