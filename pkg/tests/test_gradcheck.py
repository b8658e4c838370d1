import pytest
import torch

from deblur.base import DTYPE, SpecError
from deblur.gradcheck import build_problem, numeric_gradient, run_gradcheck
from deblur.scene import PARAMETER_CLASSES


@pytest.fixture(scope="module")
def results():
    return run_gradcheck(seed=0)


def test_every_parameter_class_is_checked_once(results):
    assert [r.name for r in results] == list(PARAMETER_CLASSES)


def test_analytic_gradients_match_finite_differences(results):
    for r in results:
        assert r.passed, f"{r.name}: rel error {r.rel_error:.2e}"
        assert r.analytic_norm > 0.0, r.name


def test_corrupted_gradient_is_caught():
    corrupted = {r.name: r for r in run_gradcheck(seed=0, corrupt="camera_twists")}
    assert not corrupted["camera_twists"].passed
    assert corrupted["camera_twists"].rel_error > 0.1
    assert corrupted["means"].passed


def test_unknown_corrupt_class_is_rejected():
    with pytest.raises(SpecError):
        run_gradcheck(corrupt="wobble")


def test_numeric_gradient_of_a_quadratic():
    x = torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)
    grad = numeric_gradient(lambda: (x ** 2).sum() + 3 * x[0], x, step=1e-5)
    torch.testing.assert_close(grad, torch.tensor([5.0, -4.0, 1.0], dtype=DTYPE), atol=1e-8, rtol=0)
    # the parameter is restored
    torch.testing.assert_close(x, torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE), atol=0, rtol=0)


def test_problem_exercises_every_class():
    scene, cam, spec, frames = build_problem(seed=1)
    assert spec.subframes == 3 and (cam.width, cam.height) == (16, 16)
    assert float(scene.exposure_weights.abs().sum()) > 0
    assert float(scene.camera_start.abs().sum()) > 0 and float(scene.camera_end.abs().sum()) > 0
    assert frames[0].blurry.shape == frames[0].static_gt.shape == (16, 16, 3)
