#!/usr/bin/env python3
"""
Blur-aware Gaussian splatting - command-line entry point

    python app.py synth --preset fast-object --out data/fast
    python app.py train --data data/fast --out runs/fast
    python app.py render --checkpoint runs/fast/final.ckpt --data data/fast --t 3
    python app.py eval --checkpoint runs/fast/final.ckpt --data data/fast
    python app.py gradcheck
    python app.py ablate --presets fast-object --seeds 0 1 2 --out runs/ablation
"""

import argparse
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

from decouple import config as env
from dotenv import load_dotenv

load_dotenv()

import numpy as np  # noqa: E402
import torch  # noqa: E402

import utils  # noqa: E402
from config import TrainingConfig, config  # noqa: E402
from deblur.base import DatasetFormatError, DeblurError, NonFiniteError  # noqa: E402
from deblur.blur import SUBFRAME_CHOICES, ExposureSpec, reference_pose, render_sharp, synthesize_blur  # noqa: E402
from deblur.data_synth import SyntheticSpec, export, generate, import_dataset, initial_scene  # noqa: E402
from deblur.gradcheck import run_gradcheck  # noqa: E402
from deblur.metrics import laplacian_sharpness, pose_error, psnr, ssim  # noqa: E402
from deblur.optim import HISTORY_COLUMNS, LearningRates, OptimizerState, settings_from_config, train  # noqa: E402
from deblur.scene import PARAMETER_CLASSES, SceneModel  # noqa: E402
from presets import PRESET_NAMES, get_preset  # noqa: E402

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("t", "psnr", "ssim", "rot_err_deg", "trans_err", "sharpness_blurry", "sharpness_render")
ABLATION_COLUMNS = ("preset", "seed", "variant", "N", "psnr", "ssim", "rot_err_deg", "trans_err", "seconds")


def resolve_config(args) -> TrainingConfig:
    """Profile class, then the JSON file, then command-line overrides"""
    cfg = TrainingConfig.from_object(config[args.profile])
    if getattr(args, 'config', None):
        cfg = TrainingConfig.from_json(args.config, cfg)
    cfg = cfg.with_overrides(seed=args.seed, threads=args.threads,
                             epochs=getattr(args, 'epochs', None), schedule=getattr(args, 'schedule', None),
                             subframes=getattr(args, 'subframes', None))
    torch.set_num_threads(max(1, cfg.threads))
    return cfg


# ---------------------------------------------------------------- commands
def cmd_synth(args) -> int:
    if args.spec:
        spec = SyntheticSpec.from_dict(utils.read_json(args.spec))
    else:
        spec = get_preset(args.preset, seed=args.seed if args.seed is not None else 0)
    if args.seed is not None and args.spec:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    if not out.parent.exists():
        raise DatasetFormatError("parent directory does not exist", out.parent)

    dataset, gt_scene = generate(spec)
    export(dataset, out, gt_scene)
    summary = {'frames': len(dataset.frames), 'width': spec.width, 'height': spec.height,
               'static_gaussians': spec.static_gaussians, 'dynamic_gaussians': spec.dynamic_gaussians}
    print(f"Wrote {summary['frames']} frames ({spec.width}x{spec.height}) to {out}")
    utils.write_run_log('synth', {'spec': asdict(spec), 'out': str(out), 'summary': summary}, args.log_dir)
    return 0


def _load_scene(path) -> SceneModel:
    return utils.scene_from_checkpoint(utils.load_checkpoint(path))


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    dataset = import_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start_epoch, history = 0, []
    if args.resume:
        payload = utils.load_checkpoint(args.resume)
        scene = utils.scene_from_checkpoint(payload)
        state = OptimizerState(scene, LearningRates.from_config(cfg), cfg.betas, cfg.eps)
        if payload.get('optimizer'):
            state.load_state_dict(payload['optimizer'])
        start_epoch = int(payload['epoch'])
        history = list(payload.get('history') or [])
        logger.info("Resuming from %s at epoch %d", args.resume, start_epoch)
    else:
        scene = initial_scene(dataset)
        state = OptimizerState(scene, LearningRates.from_config(cfg), cfg.betas, cfg.eps)

    last_good = None

    def checkpoint(epoch, scene, state, boundary):
        nonlocal last_good
        utils.save_checkpoint(out / 'last.ckpt', scene, epoch, state.state_dict(), cfg.to_dict(), history)
        last_good = out / 'last.ckpt'
        if boundary:
            utils.save_checkpoint(out / f'stage_e{epoch:04d}.ckpt', scene, epoch, state.state_dict(),
                                  cfg.to_dict(), history)

    started = time.perf_counter()
    try:
        train(dataset, cfg, scene, state, start_epoch, on_epoch_end=checkpoint,
              progress=not args.quiet, history=history)
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        print(f"last good checkpoint: {last_good or 'none'}", file=sys.stderr)
        utils.write_run_log('train', {'config': cfg.to_dict(), 'error': str(e), 'epoch': e.epoch,
                                      'timestamp': e.timestamp, 'terms': e.terms,
                                      'last_good': last_good}, args.log_dir)
        return 2

    utils.save_checkpoint(out / 'final.ckpt', scene, cfg.epochs, state.state_dict(), cfg.to_dict(), history)
    utils.write_csv(out / 'history.csv', history, HISTORY_COLUMNS)
    seconds = time.perf_counter() - started
    print(f"Trained {len(history) - start_epoch} epochs, history in {out / 'history.csv'}")
    utils.write_run_log('train', {'config': cfg.to_dict(), 'data': args.data, 'out': str(out),
                                  'start_epoch': start_epoch, 'final': history[-1] if history else None,
                                  'seconds': seconds}, args.log_dir)
    return 0


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    scene = _load_scene(args.checkpoint)
    dataset = import_dataset(args.data)
    spec = ExposureSpec(subframes=cfg.subframes)
    settings = settings_from_config(cfg)
    with torch.no_grad():
        sharp = render_sharp(scene, dataset.camera, args.t, spec, args.choice, settings)
        blur = synthesize_blur(scene, dataset.camera, args.t, spec, settings, cfg.warp_subframes)
    observed = dataset.frames[args.t].blurry if args.t in dataset.frames else None
    diff = (blur - observed).abs() if observed is not None else (sharp - blur).abs()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, image in (('sharp', sharp), ('blur', blur), ('diff', diff)):
        utils.write_pfm(out / f'{args.t:04d}_{name}.pfm', image)
        utils.write_png(out / f'{args.t:04d}_{name}.png', image)
    print(f"Rendered frame {args.t} ({args.choice}) to {out}")
    utils.write_run_log('render', {'checkpoint': args.checkpoint, 't': args.t, 'choice': args.choice,
                                   'out': str(out)}, args.log_dir)
    return 0


def evaluate(scene: SceneModel, dataset, cfg: TrainingConfig) -> List[dict]:
    """Per-frame metrics of the chosen sharp subframe against the sharp ground truth"""
    spec = ExposureSpec(subframes=cfg.subframes)
    settings = settings_from_config(cfg)
    rows = []
    with torch.no_grad():
        for t in dataset.timestamps:
            frame = dataset.frames[t]
            sharp = render_sharp(scene, dataset.camera, t, spec, cfg.eval_subframe, settings)
            rot, trans = (pose_error(reference_pose(scene, t, spec), frame.gt_pose)
                          if frame.gt_pose is not None else (float('nan'), float('nan')))
            rows.append({
                't': t,
                'psnr': psnr(sharp, frame.sharp_gt) if frame.sharp_gt is not None else float('nan'),
                'ssim': ssim(sharp, frame.sharp_gt) if frame.sharp_gt is not None else float('nan'),
                'rot_err_deg': rot,
                'trans_err': trans,
                'sharpness_blurry': laplacian_sharpness(frame.blurry) if frame.blurry is not None else float('nan'),
                'sharpness_render': laplacian_sharpness(sharp),
            })
    return rows


def aggregate(rows: List[dict]) -> dict:
    mean = {'t': 'mean'}
    for c in REPORT_COLUMNS[1:]:
        mean[c] = float(np.mean([r[c] for r in rows])) if rows else float('nan')
    return mean


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    scene = _load_scene(args.checkpoint)
    dataset = import_dataset(args.data)
    rows = evaluate(scene, dataset, cfg)
    summary = aggregate(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    utils.write_csv(out, rows + [summary], REPORT_COLUMNS)
    print(f"PSNR {summary['psnr']:.3f} dB  SSIM {summary['ssim']:.4f}  "
          f"rot {summary['rot_err_deg']:.4f} deg  trans {summary['trans_err']:.5f}")
    utils.write_run_log('eval', {'checkpoint': args.checkpoint, 'data': args.data, 'summary': summary},
                        args.log_dir)
    return 0


def cmd_gradcheck(args) -> int:
    if args.threads:
        torch.set_num_threads(args.threads)
    results = run_gradcheck(seed=args.seed or 0, size=args.size, corrupt=args.corrupt)
    print(f"{'class':<18}{'|analytic|':>14}{'|numeric|':>14}{'rel err':>12}  result")
    for r in results:
        print(f"{r.name:<18}{r.analytic_norm:>14.4e}{r.numeric_norm:>14.4e}{r.rel_error:>12.2e}  "
              f"{'pass' if r.passed else 'FAIL'}")
    utils.write_run_log('gradcheck', {'seed': args.seed, 'size': args.size, 'corrupt': args.corrupt,
                                      'results': [asdict(r) for r in results]}, args.log_dir)
    return 0 if all(r.passed for r in results) else 1


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for preset in args.presets:
        for seed in args.seeds:
            dataset, _ = generate(get_preset(preset, seed))
            for n in args.subframe_sweep or [base.subframes]:
                for variant in args.variants:
                    cfg = base.with_overrides(schedule=variant, subframes=n, seed=seed)
                    started = time.perf_counter()
                    scene, _ = train(dataset, cfg, progress=False)
                    seconds = time.perf_counter() - started
                    summary = aggregate(evaluate(scene, dataset, cfg))
                    rows.append({'preset': preset, 'seed': seed, 'variant': variant, 'N': n,
                                 'psnr': summary['psnr'], 'ssim': summary['ssim'],
                                 'rot_err_deg': summary['rot_err_deg'], 'trans_err': summary['trans_err'],
                                 'seconds': seconds})
                    logger.info("ablate %s seed %d %s N=%d: PSNR %.3f", preset, seed, variant, n, summary['psnr'])
                    utils.write_csv(out / 'ablation.csv', rows, ABLATION_COLUMNS)
    print(f"Wrote {len(rows)} runs to {out / 'ablation.csv'}")
    utils.write_run_log('ablate', {'config': base.to_dict(), 'rows': rows}, args.log_dir)
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--profile', choices=sorted(config), default=env('DEBLUR_PROFILE', default='default'))
    common.add_argument('--config', help='training config JSON overlaid on the profile')
    common.add_argument('--seed', type=int)
    common.add_argument('--threads', type=int)
    common.add_argument('--log-level', help="defaults to the profile's LOG_LEVEL")
    common.add_argument('--log-dir', help="defaults to the profile's LOG_DIR")

    parser = argparse.ArgumentParser(description='Blur-aware Gaussian splatting with stagewise pose refinement')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', parents=[common], help='generate a synthetic dataset')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--preset', choices=PRESET_NAMES)
    source.add_argument('--spec', help='SyntheticSpec as JSON')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('train', parents=[common], help='stagewise pose/scene optimization')
    p.add_argument('--data', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--resume')
    p.add_argument('--epochs', type=int)
    p.add_argument('--schedule', choices=('stagewise', 'joint', 'frozen-pose'))
    p.add_argument('--subframes', type=int)
    p.add_argument('--quiet', action='store_true')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('render', parents=[common], help='render one frame from a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--t', type=int, required=True)
    p.add_argument('--choice', choices=SUBFRAME_CHOICES, default='middle')
    p.add_argument('--out', default='renders')
    p.set_defaults(func=cmd_render)

    p = sub.add_parser('eval', parents=[common], help='per-frame PSNR/SSIM/pose report')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--out', default='report.csv')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference check of every parameter class')
    p.add_argument('--size', type=int, default=16)
    p.add_argument('--corrupt', choices=sorted(PARAMETER_CLASSES), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('ablate', parents=[common], help='schedule variants and N sweep over presets')
    p.add_argument('--presets', nargs='+', choices=PRESET_NAMES, default=list(PRESET_NAMES))
    p.add_argument('--seeds', nargs='+', type=int, default=[0])
    p.add_argument('--variants', nargs='+', choices=('stagewise', 'joint', 'frozen-pose'),
                   default=['stagewise', 'joint', 'frozen-pose'])
    p.add_argument('--subframe-sweep', nargs='+', type=int)
    p.add_argument('--epochs', type=int)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def apply_profile_defaults(args) -> argparse.Namespace:
    """Fill logging options left unset on the command line from the selected profile"""
    profile = config[args.profile]
    if args.log_level is None:
        args.log_level = profile.LOG_LEVEL
    if args.log_dir is None:
        args.log_dir = profile.LOG_DIR
    return args


def main(argv: Optional[List[str]] = None) -> int:
    args = apply_profile_defaults(build_parser().parse_args(argv))
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except DeblurError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
