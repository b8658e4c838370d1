"""
Losses and the stagewise pose/scene optimizer.

Training runs in three stages over epochs: scene parameters only, camera
twists only, then both. Parameters outside the current stage are taken out of
the graph and their optimizer is not stepped, so they stay bitwise unchanged.
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from .base import MissingObservationError, NonFiniteError, SpecError
from .blur import ExposureSpec, reference_pose, render_static, synthesize_blur
from .data_synth import initial_scene
from .metrics import pose_error
from .render import Camera, RenderSettings
from .scene import PARAMETER_CLASSES, POSE_CLASSES, SCENE_CLASSES, SceneModel

if TYPE_CHECKING:
    from config import TrainingConfig

logger = logging.getLogger(__name__)

SCHEDULES = ("stagewise", "joint", "frozen-pose")
HISTORY_COLUMNS = ("epoch", "L_dym", "L_static", "L_total", "rot_err_deg", "trans_err")


@dataclass(frozen=True)
class StageSchedule:
    """Epoch bounds: [0, e1) scene only, [e1, e2) poses only, [e2, emax) both"""
    e1: int
    e2: int
    emax: int

    def __post_init__(self):
        if not 0 <= self.e1 <= self.e2 <= self.emax:
            raise SpecError(f"stage bounds must satisfy 0 <= E1 <= E2 <= Emax, got "
                            f"({self.e1}, {self.e2}, {self.emax})")

    @classmethod
    def build(cls, emax: int, e1: Optional[int] = None, e2: Optional[int] = None,
              variant: str = "stagewise") -> "StageSchedule":
        if variant == "joint":
            return cls(0, 0, emax)
        if variant == "frozen-pose":
            return cls(emax, emax, emax)
        if variant != "stagewise":
            raise SpecError(f"schedule must be one of {SCHEDULES}, got {variant!r}")
        e1 = int(round(0.4 * emax)) if e1 is None else e1
        e2 = int(round(0.7 * emax)) if e2 is None else e2
        return cls(e1, e2, emax)

    def stage(self, epoch: int) -> int:
        if epoch < self.e1:
            return 1
        if epoch < self.e2:
            return 2
        return 3

    def classes(self, epoch: int) -> Tuple[str, ...]:
        """Parameter classes updated at this epoch"""
        return {1: SCENE_CLASSES, 2: POSE_CLASSES, 3: SCENE_CLASSES + POSE_CLASSES}[self.stage(epoch)]

    def boundaries(self) -> List[int]:
        return sorted({e for e in (self.e1, self.e2) if 0 < e < self.emax})


@dataclass(frozen=True)
class LearningRates:
    means: float = 1.6e-3
    log_scales: float = 5e-3
    rotations: float = 1e-3
    opacities: float = 5e-2
    colors: float = 2.5e-3
    deformation: float = 1e-3
    exposure_weights: float = 1e-3
    camera_twists: float = 1e-3

    @classmethod
    def from_config(cls, cfg: "TrainingConfig") -> "LearningRates":
        return cls(cfg.lr_means, cfg.lr_log_scales, cfg.lr_rotations, cfg.lr_opacity, cfg.lr_color,
                   cfg.lr_deformation, cfg.lr_deformation, cfg.lr_twists)


class OptimizerState:
    """Adam moments for the scene (theta) and camera (phi) groups.

    One torch Adam per side; each parameter class is a param group with its
    own learning rate.
    """

    def __init__(self, scene: SceneModel, rates: Optional[LearningRates] = None,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        rates = rates or LearningRates()
        self.scene_optimizer = torch.optim.Adam(self._groups(scene, SCENE_CLASSES, rates), betas=betas, eps=eps)
        self.camera_optimizer = torch.optim.Adam(self._groups(scene, POSE_CLASSES, rates), betas=betas, eps=eps)

    @staticmethod
    def _groups(scene, classes, rates):
        return [{"params": scene.class_parameters([c]), "lr": getattr(rates, c), "name": c} for c in classes]

    def optimizers_for(self, classes: Sequence[str]) -> List[torch.optim.Optimizer]:
        chosen = []
        if any(c in SCENE_CLASSES for c in classes):
            chosen.append(self.scene_optimizer)
        if any(c in POSE_CLASSES for c in classes):
            chosen.append(self.camera_optimizer)
        return chosen

    def steps(self) -> Dict[str, int]:
        """Adam step counter per parameter tensor"""
        counts = {}
        for opt in (self.scene_optimizer, self.camera_optimizer):
            for group in opt.param_groups:
                for p in group["params"]:
                    state = opt.state.get(p, {})
                    counts[f"{group['name']}:{id(p)}"] = int(state["step"]) if "step" in state else 0
        return counts

    def state_dict(self) -> Dict[str, dict]:
        return {"scene": self.scene_optimizer.state_dict(), "camera": self.camera_optimizer.state_dict()}

    def load_state_dict(self, state: Mapping[str, dict]) -> None:
        self.scene_optimizer.load_state_dict(state["scene"])
        self.camera_optimizer.load_state_dict(state["camera"])


def _observation(frames: Mapping, t: int, attribute: str) -> torch.Tensor:
    frame = frames.get(t)
    target = getattr(frame, attribute, None) if frame is not None else None
    if target is None:
        raise MissingObservationError(f"no {attribute} image for timestamp {t}")
    return target


def mse(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.mean((prediction - target) ** 2)


def loss_dym(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec, frames: Mapping,
             settings: Optional[RenderSettings] = None, warp_subframes: bool = True) -> torch.Tensor:
    """MSE between the synthesized blur and the observed blurry frame"""
    target = _observation(frames, t, "blurry")
    return mse(synthesize_blur(scene, cam, t, spec, settings, warp_subframes), target)


def loss_static(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec, frames: Mapping,
                settings: Optional[RenderSettings] = None) -> torch.Tensor:
    """MSE between the static Gaussians rendered sharp at P_t and the static target"""
    target = _observation(frames, t, "static_gt")
    return mse(render_static(scene, cam, t, spec, settings), target)


def loss_total(scene: SceneModel, cam: Camera, t: int, spec: ExposureSpec, frames: Mapping,
               settings: Optional[RenderSettings] = None, warp_subframes: bool = True) -> torch.Tensor:
    return (loss_dym(scene, cam, t, spec, frames, settings, warp_subframes)
            + loss_static(scene, cam, t, spec, frames, settings))


def _set_trainable(scene: SceneModel, classes: Sequence[str]) -> None:
    live = {name for c in classes for name in PARAMETER_CLASSES[c]}
    for name, p in scene.named_parameters():
        p.requires_grad_(name in live)


def train_step(scene: SceneModel, state: OptimizerState, schedule: StageSchedule, epoch: int,
               batch: Sequence[int], frames: Mapping, cam: Camera, spec: ExposureSpec,
               settings: Optional[RenderSettings] = None, warp_subframes: bool = True) -> Dict[str, float]:
    """One Adam step per timestamp in batch on the classes of the current stage.

    Returns the batch means of the loss terms, each taken before its step.
    """
    if not 0 <= epoch < schedule.emax:
        raise SpecError(f"epoch {epoch} outside 0..{schedule.emax - 1}")
    classes = schedule.classes(epoch)
    optimizers = state.optimizers_for(classes)
    sums = {"L_dym": 0.0, "L_static": 0.0, "L_total": 0.0}
    _set_trainable(scene, classes)
    try:
        for t in batch:
            for opt in optimizers:
                opt.zero_grad(set_to_none=True)
            try:
                dym = loss_dym(scene, cam, t, spec, frames, settings, warp_subframes)
                static = loss_static(scene, cam, t, spec, frames, settings)
            except NonFiniteError as e:
                if e.epoch is not None:
                    raise
                raise NonFiniteError(f"non-finite scene at epoch {epoch}, timestamp {t}: {e}",
                                     epoch=epoch, timestamp=t) from e
            total = dym + static
            terms = {"L_dym": dym.detach().item(), "L_static": static.detach().item(),
                     "L_total": total.detach().item()}
            if not all(math.isfinite(v) for v in terms.values()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, timestamp {t}: {terms}",
                                     epoch=epoch, timestamp=t, terms=terms)
            if total.requires_grad:
                total.backward()
                for opt in optimizers:
                    opt.step()
                scene.renormalize_(classes)
            for k, v in terms.items():
                sums[k] += v
    finally:
        _set_trainable(scene, SCENE_CLASSES + POSE_CLASSES)
    return {k: v / max(1, len(batch)) for k, v in sums.items()}


def epoch_order(timestamps: Sequence[int], seed: int, epoch: int) -> List[int]:
    """Shuffled visiting order, a pure function of (seed, epoch)"""
    rng = np.random.default_rng([seed, epoch])
    return [timestamps[i] for i in rng.permutation(len(timestamps))]


@torch.no_grad()
def pose_errors(scene: SceneModel, frames: Mapping, spec: ExposureSpec) -> Tuple[float, float]:
    """Mean rotation (degrees) and camera-centre error of P_t against ground truth"""
    rot, trans = [], []
    for t, frame in frames.items():
        if getattr(frame, "gt_pose", None) is None:
            continue
        r, d = pose_error(reference_pose(scene, t, spec), frame.gt_pose)
        rot.append(r)
        trans.append(d)
    if not rot:
        return float("nan"), float("nan")
    return float(np.mean(rot)), float(np.mean(trans))


def settings_from_config(cfg: "TrainingConfig") -> RenderSettings:
    return RenderSettings(background=tuple(cfg.background), dilation=cfg.dilation, cull_sigma=cfg.cull_sigma,
                          transmittance_eps=cfg.transmittance_eps, tile_pixels=cfg.tile_pixels)


CheckpointHook = Callable[[int, SceneModel, OptimizerState, bool], None]


def train(dataset, cfg: "TrainingConfig", scene: Optional[SceneModel] = None,
          state: Optional[OptimizerState] = None, start_epoch: int = 0,
          on_epoch_end: Optional[CheckpointHook] = None, progress: bool = True,
          history: Optional[List[Dict[str, float]]] = None) -> Tuple[SceneModel, List[Dict[str, float]]]:
    """Run epochs start_epoch..Emax-1 over the dataset's frames.

    on_epoch_end(completed_epochs, scene, state, at_stage_boundary) is called
    after every epoch so the caller can write checkpoints. Rows are appended to
    history when one is passed.
    """
    spec = ExposureSpec(subframes=cfg.subframes)
    settings = settings_from_config(cfg)
    schedule = StageSchedule.build(cfg.epochs, cfg.e1, cfg.e2, cfg.schedule)
    if scene is None:
        scene = initial_scene(dataset)
    if state is None:
        state = OptimizerState(scene, LearningRates.from_config(cfg), tuple(cfg.betas), cfg.eps)

    timestamps = sorted(dataset.frames)
    boundaries = set(schedule.boundaries())
    history = [] if history is None else history
    logger.info("Training %d frames for epochs %d..%d (E1=%d, E2=%d, N=%d)", len(timestamps),
                start_epoch, schedule.emax, schedule.e1, schedule.e2, spec.subframes)

    epochs = range(start_epoch, schedule.emax)
    for epoch in tqdm(epochs, desc="train", disable=not progress):
        order = epoch_order(timestamps, cfg.seed, epoch)
        terms = train_step(scene, state, schedule, epoch, order, dataset.frames, dataset.camera, spec,
                           settings, cfg.warp_subframes)
        rot, trans = pose_errors(scene, dataset.frames, spec)
        row = {"epoch": epoch, **terms, "rot_err_deg": rot, "trans_err": trans}
        history.append(row)
        logger.info("epoch %d stage %d: L_total=%.6g L_dym=%.6g L_static=%.6g rot=%.4f deg trans=%.5f",
                    epoch, schedule.stage(epoch), terms["L_total"], terms["L_dym"], terms["L_static"], rot, trans)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, scene, state, (epoch + 1) in boundaries)
    return scene, history
