from deblur.base import SpecError
from deblur.data_synth import SyntheticSpec


def get_preset(name: str, seed: int = 0) -> SyntheticSpec:
    """Synthetic scene presets covering the motion regimes the trainer is tested on"""
    presets = {
        # Object motion
        "slow-object": {"object_speed": 0.02, "shake_rotation_deg": 0.3, "shake_translation": 0.005},
        "fast-object": {"object_speed": 0.12, "exposure": 0.8, "shake_rotation_deg": 0.3,
                        "shake_translation": 0.005},

        # Camera shake
        "small-shake": {"object_speed": 0.05, "shake_rotation_deg": 0.2, "shake_translation": 0.003},
        "large-shake": {"object_speed": 0.05, "shake_rotation_deg": 1.2, "shake_translation": 0.02},

        # Clutter
        "dense-clutter": {"static_gaussians": 200, "dynamic_gaussians": 24, "object_speed": 0.05},
    }
    if name not in presets:
        raise SpecError(f"unknown preset {name!r}; choose from {', '.join(sorted(presets))}")
    return SyntheticSpec(seed=seed, **presets[name])


PRESET_NAMES = ("slow-object", "fast-object", "small-shake", "large-shake", "dense-clutter")
