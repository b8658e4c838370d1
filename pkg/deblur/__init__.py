from .base import (DTYPE, DatasetFormatError, DeblurError, GradientStateError, ImageShapeError,
                   InterpolationError, MissingObservationError, NonFiniteError, SpecError,
                   SubframeIndexError, UnknownTimestampError)
from .se3 import AffineWarp, Pose, Rotation, Twist, compose, exp, interpolate_pose, log, relative_warp
from .scene import (GaussianPrimitive, GaussianSet, SceneModel, apply_warp, deform_dynamic,
                    evaluate_color, subframe_weight)
from .render import Camera, ForwardRecord, RenderSettings, project, rasterize, render, render_backward
from .blur import ExposureSpec, render_sharp, subframe_poses, synthesize_blur
from .optim import OptimizerState, StageSchedule, loss_dym, loss_static, loss_total, train, train_step
from .data_synth import FrameObservation, SyntheticDataset, SyntheticSpec, export, generate, import_dataset
from .metrics import laplacian_sharpness, pose_error, psnr, select_sharpest, ssim
from .gradcheck import run_gradcheck

__all__ = [
    'DTYPE', 'DeblurError', 'DatasetFormatError', 'GradientStateError', 'ImageShapeError',
    'InterpolationError', 'MissingObservationError', 'NonFiniteError', 'SpecError',
    'SubframeIndexError', 'UnknownTimestampError',
    'AffineWarp', 'Pose', 'Rotation', 'Twist', 'compose', 'exp', 'interpolate_pose', 'log', 'relative_warp',
    'GaussianPrimitive', 'GaussianSet', 'SceneModel', 'apply_warp', 'deform_dynamic', 'evaluate_color',
    'subframe_weight',
    'Camera', 'ForwardRecord', 'RenderSettings', 'project', 'rasterize', 'render', 'render_backward',
    'ExposureSpec', 'render_sharp', 'subframe_poses', 'synthesize_blur',
    'OptimizerState', 'StageSchedule', 'loss_dym', 'loss_static', 'loss_total', 'train', 'train_step',
    'FrameObservation', 'SyntheticDataset', 'SyntheticSpec', 'export', 'generate', 'import_dataset',
    'laplacian_sharpness', 'pose_error', 'psnr', 'select_sharpest', 'ssim',
    'run_gradcheck',
]
