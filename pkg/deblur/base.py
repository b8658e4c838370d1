from typing import Any, Dict, Optional
import torch

# Every tensor in the package is double precision on the CPU
DTYPE = torch.float64


def as_tensor(value: Any) -> torch.Tensor:
    """Convert array-likes to a float64 tensor without copying tensors that already match"""
    if isinstance(value, torch.Tensor):
        return value if value.dtype == DTYPE else value.to(DTYPE)
    return torch.as_tensor(value, dtype=DTYPE)


class DeblurError(Exception):
    """Base class for all errors raised by the package"""


class UnknownTimestampError(DeblurError, KeyError):
    def __init__(self, timestamp: Any):
        super().__init__(f"timestamp {timestamp!r} is not registered")
        self.timestamp = timestamp

    def __str__(self) -> str:
        return self.args[0]


class InterpolationError(DeblurError, ValueError):
    """Geodesic interpolation is undefined for a relative rotation of pi"""


class SubframeIndexError(DeblurError, IndexError):
    pass


class NonFiniteError(DeblurError, FloatingPointError):
    """A tensor that must be finite was not.

    Training failures carry the epoch, timestamp and loss terms so the CLI can
    report them next to the last good checkpoint.
    """

    def __init__(self, message: str, epoch: Optional[int] = None, timestamp: Any = None,
                 terms: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.epoch = epoch
        self.timestamp = timestamp
        self.terms = terms or {}


class GradientStateError(DeblurError, RuntimeError):
    pass


class MissingObservationError(DeblurError, LookupError):
    pass


class ImageShapeError(DeblurError, ValueError):
    pass


class DatasetFormatError(DeblurError, ValueError):
    """Raised for unreadable datasets, checkpoints and config files"""

    def __init__(self, message: str, path: Any = None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class SpecError(DeblurError, ValueError):
    pass
