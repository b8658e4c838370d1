import json

import numpy as np
import pytest

import utils
from app import REPORT_COLUMNS, aggregate, apply_profile_defaults, build_parser, main
from config import Config, DevelopmentConfig, TestingConfig
from deblur.base import SpecError
from deblur.data_synth import export, import_dataset
from presets import PRESET_NAMES, get_preset

TINY = {"seed": 2, "frames": 3, "width": 16, "height": 16, "static_gaussians": 12, "dynamic_gaussians": 3,
        "gt_subframes": 5}


def _run(*argv, log_dir) -> int:
    return main([*argv, "--log-dir", str(log_dir)])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(TINY))
    assert _run("synth", "--spec", str(spec), "--out", str(root / "data"), log_dir=root / "logs") == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    code = _run("train", "--data", str(workspace / "data"), "--out", str(workspace / "run"), "--profile", "testing",
                "--epochs", "2", "--subframes", "3", "--quiet", log_dir=workspace / "logs")
    assert code == 0
    return workspace / "run"


def test_logging_defaults_follow_the_profile():
    base = ("eval", "--checkpoint", "c.ckpt", "--data", "d")
    args = apply_profile_defaults(build_parser().parse_args([*base, "--profile", "development"]))
    assert args.log_level == DevelopmentConfig.LOG_LEVEL and args.log_dir == Config.LOG_DIR
    args = apply_profile_defaults(build_parser().parse_args([*base, "--profile", "testing"]))
    assert args.log_level == TestingConfig.LOG_LEVEL
    explicit = apply_profile_defaults(build_parser().parse_args([*base, "--profile", "development", "--log-level",
                                                                 "ERROR", "--log-dir", "elsewhere"]))
    assert (explicit.log_level, explicit.log_dir) == ("ERROR", "elsewhere")


# ------------------------------------------------------------------- synth
def test_synth_writes_a_dataset(workspace):
    data = workspace / "data"
    dataset = import_dataset(data)
    assert dataset.timestamps == [0, 1, 2]
    assert len(list((data / "frames").glob("*.pfm"))) == 9
    assert (data / "gt_scene.ckpt").exists()
    assert list((workspace / "logs").glob("synth_*.log"))


def test_synth_is_reproducible(workspace, tmp_path):
    spec = workspace / "spec.json"
    assert _run("synth", "--spec", str(spec), "--out", str(tmp_path / "again"), log_dir=tmp_path) == 0
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (workspace / "data" / "manifest.json").read_bytes()


def test_synth_into_missing_parent_fails(workspace, tmp_path, capsys):
    code = _run("synth", "--spec", str(workspace / "spec.json"), "--out", str(tmp_path / "no" / "such"),
                log_dir=tmp_path)
    assert code == 2
    assert "parent directory does not exist" in capsys.readouterr().err


def test_synth_rejects_a_bad_spec(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"frames": 3, "static_gaussians": 0, "dynamic_gaussians": 0}))
    assert _run("synth", "--spec", str(spec), "--out", str(tmp_path / "data"), log_dir=tmp_path) == 2
    assert "no Gaussians" in capsys.readouterr().err


@pytest.mark.slow
def test_fast_object_preset_has_24_frame_triplets(tmp_path):
    assert _run("synth", "--preset", "fast-object", "--out", str(tmp_path / "fast"), log_dir=tmp_path) == 0
    assert len(list((tmp_path / "fast" / "frames").glob("*_blurry.pfm"))) == 24
    assert len(list((tmp_path / "fast" / "frames").glob("*.pfm"))) == 72


def test_presets():
    assert set(PRESET_NAMES) == {"slow-object", "fast-object", "small-shake", "large-shake", "dense-clutter"}
    for name in PRESET_NAMES:
        assert get_preset(name, seed=3).seed == 3
    assert get_preset("fast-object").object_speed > get_preset("slow-object").object_speed
    with pytest.raises(SpecError):
        get_preset("gentle-breeze")


# ------------------------------------------------------------------- train
def test_train_writes_checkpoints_and_history(trained):
    history = utils.read_csv(trained / "history.csv")
    assert [row["epoch"] for row in history] == ["0", "1"]
    assert all(np.isfinite(float(row["L_total"])) for row in history)
    for name in ("final.ckpt", "last.ckpt", "stage_e0001.ckpt"):
        payload = utils.load_checkpoint(trained / name)
        assert payload["config"]["subframes"] == 3
    assert utils.load_checkpoint(trained / "final.ckpt")["epoch"] == 2


def test_resumed_run_matches_an_uninterrupted_one(workspace, tmp_path):
    common = ("--data", str(workspace / "data"), "--profile", "testing", "--epochs", "3", "--subframes", "3",
              "--quiet")
    assert _run("train", *common, "--out", str(tmp_path / "full"), log_dir=tmp_path) == 0
    # stage boundary at epoch 2 of 3
    checkpoint = tmp_path / "full" / "stage_e0002.ckpt"
    assert _run("train", *common, "--out", str(tmp_path / "resumed"), "--resume", str(checkpoint),
                log_dir=tmp_path) == 0
    full = utils.read_csv(tmp_path / "full" / "history.csv")
    resumed = utils.read_csv(tmp_path / "resumed" / "history.csv")
    assert [row["epoch"] for row in resumed] == ["0", "1", "2"]
    assert resumed == full
    assert resumed[2]["L_total"] == full[2]["L_total"]


def test_non_finite_training_reports_last_good_checkpoint(workspace, tmp_path, capsys):
    broken = tmp_path / "broken"
    dataset = import_dataset(workspace / "data")
    export(dataset, broken)
    utils.write_pfm(broken / "frames" / "0000_blurry.pfm", np.full((16, 16, 3), np.nan, dtype=np.float32))
    code = _run("train", "--data", str(broken), "--out", str(tmp_path / "run"), "--profile", "testing",
                "--epochs", "1", "--quiet", log_dir=tmp_path)
    assert code == 2
    err = capsys.readouterr().err
    assert "non-finite loss" in err and "last good checkpoint: none" in err


# ------------------------------------------------------------ render, eval
def test_render_writes_images(trained, workspace, tmp_path):
    out = tmp_path / "renders"
    code = _run("render", "--checkpoint", str(trained / "final.ckpt"), "--data", str(workspace / "data"),
                "--t", "1", "--choice", "start", "--profile", "testing", "--out", str(out), log_dir=tmp_path)
    assert code == 0
    for name in ("sharp", "blur", "diff"):
        assert utils.read_pfm(out / f"0001_{name}.pfm").shape == (16, 16, 3)
        assert (out / f"0001_{name}.png").exists()


def test_render_of_unknown_timestamp_fails(trained, workspace, tmp_path):
    code = _run("render", "--checkpoint", str(trained / "final.ckpt"), "--data", str(workspace / "data"),
                "--t", "9", "--out", str(tmp_path), log_dir=tmp_path)
    assert code == 2


def test_eval_writes_a_report(trained, workspace, tmp_path):
    report = tmp_path / "report.csv"
    code = _run("eval", "--checkpoint", str(trained / "final.ckpt"), "--data", str(workspace / "data"),
                "--profile", "testing", "--out", str(report), log_dir=tmp_path)
    assert code == 0
    rows = utils.read_csv(report)
    assert [row["t"] for row in rows] == ["0", "1", "2", "mean"]
    assert set(REPORT_COLUMNS) == set(rows[0])
    assert 0.0 < float(rows[-1]["psnr"]) <= 100.0


def test_ground_truth_scene_evaluates_well(workspace, tmp_path):
    report = tmp_path / "gt.csv"
    code = _run("eval", "--checkpoint", str(workspace / "data" / "gt_scene.ckpt"), "--data",
                str(workspace / "data"), "--profile", "testing", "--out", str(report), log_dir=tmp_path)
    assert code == 0
    mean = utils.read_csv(report)[-1]
    assert float(mean["rot_err_deg"]) < 1e-6
    assert float(mean["psnr"]) > 40.0


def test_aggregate_averages_every_metric():
    rows = [{"t": 0, "psnr": 20.0, "ssim": 0.5, "rot_err_deg": 1.0, "trans_err": 0.1, "sharpness_blurry": 1.0,
             "sharpness_render": 2.0},
            {"t": 1, "psnr": 30.0, "ssim": 0.7, "rot_err_deg": 3.0, "trans_err": 0.3, "sharpness_blurry": 3.0,
             "sharpness_render": 4.0}]
    mean = aggregate(rows)
    assert mean["t"] == "mean"
    assert mean["psnr"] == pytest.approx(25.0) and mean["rot_err_deg"] == pytest.approx(2.0)


@pytest.mark.slow
def test_ablate_writes_one_row_per_variant(tmp_path):
    code = _run("ablate", "--presets", "small-shake", "--seeds", "1", "--variants", "joint", "frozen-pose",
                "--epochs", "1", "--subframe-sweep", "3", "--profile", "testing", "--out", str(tmp_path / "abl"),
                log_dir=tmp_path)
    assert code == 0
    rows = utils.read_csv(tmp_path / "abl" / "ablation.csv")
    assert [row["variant"] for row in rows] == ["joint", "frozen-pose"]
    assert all(row["N"] == "3" and row["seed"] == "1" for row in rows)


# --------------------------------------------------------------- gradcheck
def test_gradcheck_command(tmp_path, capsys):
    assert _run("gradcheck", log_dir=tmp_path) == 0
    out = capsys.readouterr().out
    assert out.count("pass") == 8
    assert list(tmp_path.glob("gradcheck_*.log"))


@pytest.mark.slow
def test_gradcheck_command_fails_on_a_corrupted_class(tmp_path, capsys):
    assert _run("gradcheck", "--corrupt", "colors", log_dir=tmp_path) == 1
    assert "FAIL" in capsys.readouterr().out


# -------------------------------------------------------------- acceptance
SEEDS = ("0", "1", "2", "3", "4")


@pytest.fixture(scope="module")
def schedule_ablation(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    code = _run("ablate", "--presets", "small-shake", "--seeds", *SEEDS, "--variants", "stagewise", "joint",
                "frozen-pose", "--subframe-sweep", "7", "--profile", "benchmark", "--out", str(out), log_dir=out)
    assert code == 0
    return {(row["seed"], row["variant"]): row for row in utils.read_csv(out / "ablation.csv")}


@pytest.mark.acceptance
def test_stagewise_training_beats_frozen_initial_poses(schedule_ablation):
    wins = 0
    for seed in SEEDS:
        stagewise, frozen = schedule_ablation[seed, "stagewise"], schedule_ablation[seed, "frozen-pose"]
        gain = float(stagewise["psnr"]) - float(frozen["psnr"])
        if gain >= 2.0 and float(stagewise["rot_err_deg"]) <= 0.5 * float(frozen["rot_err_deg"]):
            wins += 1
    assert wins >= 4


@pytest.mark.acceptance
def test_stagewise_is_at_least_as_good_as_joint(schedule_ablation):
    wins = sum(float(schedule_ablation[s, "stagewise"]["psnr"]) >= float(schedule_ablation[s, "joint"]["psnr"])
               for s in SEEDS)
    assert wins >= 3


@pytest.mark.acceptance
def test_subframe_count_sweep_on_fast_motion(tmp_path):
    code = _run("ablate", "--presets", "fast-object", "--seeds", "0", "--variants", "stagewise", "--subframe-sweep",
                "1", "7", "13", "--profile", "benchmark", "--out", str(tmp_path), log_dir=tmp_path)
    assert code == 0
    rows = {int(row["N"]): row for row in utils.read_csv(tmp_path / "ablation.csv")}
    psnr = {n: float(row["psnr"]) for n, row in rows.items()}
    assert psnr[7] - psnr[1] >= 1.0
    assert psnr[13] - psnr[7] < 0.5
    seconds = {n: float(row["seconds"]) for n, row in rows.items()}
    assert seconds[13] / seconds[7] <= 1.2 * 13 / 7
