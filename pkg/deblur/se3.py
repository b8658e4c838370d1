"""
Rigid-transform algebra for camera poses and per-primitive warps.

Rotations are unit quaternions (w, x, y, z) with w >= 0. Poses are
world-to-camera, x_cam = R @ x_world + t. Twists are 6-vectors (omega, v) in
se(3). Every function is differentiable with torch autograd, including at the
identity where the small-angle series branches are taken.
"""

import math
from dataclasses import dataclass
from typing import Union

import torch

from .base import DTYPE, InterpolationError, SpecError, as_tensor

# |omega| below this uses the exact series of the Rodrigues terms
SMALL_ANGLE = 1e-6
# the V-matrix coefficients lose digits to cancellation much earlier
SERIES_ANGLE = 1e-3
# interpolation refuses relative rotations this close to pi
ANTIPODAL_TOL = 1e-9


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    return q / torch.linalg.norm(q, dim=-1, keepdim=True)


def quat_canonical(q: torch.Tensor) -> torch.Tensor:
    """Pick the w >= 0 representative of the double cover"""
    return torch.where(q[..., :1] < 0, -q, q)


def quat_conjugate(q: torch.Tensor) -> torch.Tensor:
    return torch.cat([q[..., :1], -q[..., 1:]], dim=-1)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product a * b (rotate by b first, then a)"""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], dim=-1)


def quat_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrix of a unit quaternion, shape (..., 3, 3)"""
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(*q.shape[:-1], 3, 3)


def hat(omega: torch.Tensor) -> torch.Tensor:
    """Skew-symmetric matrix of a 3-vector"""
    wx, wy, wz = omega.unbind(-1)
    zero = torch.zeros_like(wx)
    return torch.stack([
        zero, -wz, wy,
        wz, zero, -wx,
        -wy, wx, zero,
    ], dim=-1).reshape(*omega.shape[:-1], 3, 3)


def _safe_angle(omega: torch.Tensor, threshold: float):
    # double-where so the discarded branch never poisons the gradient at zero
    theta_sq = (omega * omega).sum(-1, keepdim=True)
    small = theta_sq < threshold * threshold
    theta = torch.sqrt(torch.where(small, torch.ones_like(theta_sq), theta_sq))
    return theta_sq, theta, small


def so3_exp(omega: torch.Tensor) -> torch.Tensor:
    """Axis-angle vector to unit quaternion"""
    theta_sq, theta, small = _safe_angle(omega, SMALL_ANGLE)
    real = torch.where(small, 1.0 - theta_sq / 8.0, torch.cos(0.5 * theta))
    scale = torch.where(small, 0.5 - theta_sq / 48.0, torch.sin(0.5 * theta) / theta)
    return torch.cat([real, scale * omega], dim=-1)


def so3_log(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternion to axis-angle vector with angle in [0, pi]"""
    q = quat_canonical(q)
    w, v = q[..., :1], q[..., 1:]
    # |v| = sin(theta / 2)
    n_sq, n, small = _safe_angle(v, 0.5 * SMALL_ANGLE)
    scale = torch.where(
        small,
        2.0 / w * (1.0 - n_sq / (3.0 * w * w)),
        2.0 * torch.atan2(n, w) / n,
    )
    return scale * v


def _v_matrix(omega: torch.Tensor) -> torch.Tensor:
    theta_sq, theta, small = _safe_angle(omega, SERIES_ANGLE)
    b = torch.where(small, 0.5 - theta_sq / 24.0 + theta_sq ** 2 / 720.0,
                    (1.0 - torch.cos(theta)) / (theta * theta))
    c = torch.where(small, 1.0 / 6.0 - theta_sq / 120.0 + theta_sq ** 2 / 5040.0,
                    (theta - torch.sin(theta)) / (theta * theta * theta))
    k = hat(omega)
    eye = torch.eye(3, dtype=omega.dtype).expand_as(k)
    return eye + b[..., None] * k + c[..., None] * (k @ k)


def _v_inverse(omega: torch.Tensor) -> torch.Tensor:
    theta_sq, theta, small = _safe_angle(omega, SERIES_ANGLE)
    half = 0.5 * theta
    d = torch.where(small, 1.0 / 12.0 + theta_sq / 720.0 + theta_sq ** 2 / 30240.0,
                    (1.0 - half * torch.cos(half) / torch.sin(half)) / (theta * theta))
    k = hat(omega)
    eye = torch.eye(3, dtype=omega.dtype).expand_as(k)
    return eye - 0.5 * k + d[..., None] * (k @ k)


@dataclass(frozen=True)
class Rotation:
    quat: torch.Tensor

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE))

    @classmethod
    def from_quat(cls, q) -> "Rotation":
        """Normalize and canonicalize an arbitrary non-zero quaternion"""
        return cls(quat_canonical(quat_normalize(as_tensor(q))))

    @classmethod
    def from_axis_angle(cls, omega) -> "Rotation":
        return cls.from_quat(so3_exp(as_tensor(omega)))

    def matrix(self) -> torch.Tensor:
        return quat_to_matrix(self.quat)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conjugate(self.quat))

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation.from_quat(quat_multiply(self.quat, other.quat))

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.matrix().transpose(-1, -2)

    def log(self) -> torch.Tensor:
        return so3_log(self.quat)

    def angle(self) -> torch.Tensor:
        """Geodesic angle in radians"""
        q = quat_canonical(self.quat)
        return 2.0 * torch.atan2(torch.linalg.norm(q[..., 1:], dim=-1), q[..., 0])


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform"""
    rotation: Rotation
    translation: torch.Tensor

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_vector(cls, vector):
        """Build from 7 numbers (qw, qx, qy, qz, tx, ty, tz)"""
        vector = as_tensor(vector)
        return cls(Rotation.from_quat(vector[:4]), vector[4:7])

    def to_vector(self) -> torch.Tensor:
        return torch.cat([self.rotation.quat, self.translation])

    def matrix(self) -> torch.Tensor:
        top = torch.cat([self.rotation.matrix(), self.translation[:, None]], dim=1)
        bottom = torch.tensor([[0.0, 0.0, 0.0, 1.0]], dtype=top.dtype)
        return torch.cat([top, bottom], dim=0)

    def inverse(self):
        inv = self.rotation.inverse()
        return type(self)(inv, -inv.apply(self.translation))

    def compose(self, other: "Pose"):
        """self o other: apply other first"""
        return type(self)(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def __matmul__(self, other: "Pose"):
        return self.compose(other)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return self.rotation.apply(points) + self.translation

    def camera_center(self) -> torch.Tensor:
        """World position of the optical centre, -R^T t"""
        return -self.rotation.inverse().apply(self.translation)


class AffineWarp(Pose):
    """Rigid SE(3) warp applied to Gaussian primitives.

    Shares the Pose algebra; the separate type marks a transform that acts on
    scene content rather than on the camera.
    """

    @classmethod
    def from_pose(cls, pose: Pose) -> "AffineWarp":
        return cls(pose.rotation, pose.translation)


@dataclass(frozen=True)
class Twist:
    """Element of se(3): rotational part omega first, then v"""
    vector: torch.Tensor

    @classmethod
    def zero(cls) -> "Twist":
        return cls(torch.zeros(6, dtype=DTYPE))

    @property
    def omega(self) -> torch.Tensor:
        return self.vector[..., :3]

    @property
    def v(self) -> torch.Tensor:
        return self.vector[..., 3:]

    def scaled(self, s: float) -> "Twist":
        return Twist(self.vector * s)


TwistLike = Union[Twist, torch.Tensor]


def _twist_vector(twist: TwistLike) -> torch.Tensor:
    return twist.vector if isinstance(twist, Twist) else as_tensor(twist)


def exp(twist: TwistLike) -> Pose:
    xi = _twist_vector(twist)
    omega, v = xi[..., :3], xi[..., 3:]
    translation = (_v_matrix(omega) @ v[..., None])[..., 0]
    return Pose(Rotation(quat_canonical(so3_exp(omega))), translation)


def log(pose: Pose) -> Twist:
    omega = so3_log(pose.rotation.quat)
    v = (_v_inverse(omega) @ pose.translation[..., None])[..., 0]
    return Twist(torch.cat([omega, v], dim=-1))


def compose(a: Pose, b: Pose) -> Pose:
    """a o b, i.e. apply b first"""
    return a.compose(b)


def relative_warp(pose_m: Pose, pose_n: Pose) -> AffineWarp:
    """Warp T with render(T(G), pose_n) == render(G, pose_m).

    pose_n is the fixed reference. Camera-space points must agree,
    pose_n(T(x)) = pose_m(x), hence T = pose_n^-1 o pose_m, i.e.
    R = R_n^T R_m and t = R_n^T (t_m - t_n).
    """
    return AffineWarp.from_pose(pose_n.inverse().compose(pose_m))


def interpolate_pose(start: Pose, end: Pose, s: float) -> Pose:
    """Geodesic interpolation exp(s * log(end o start^-1)) o start"""
    if not 0.0 <= s <= 1.0:
        raise SpecError(f"interpolation fraction {s} outside [0, 1]")
    delta = log(end.compose(start.inverse()))
    angle = float(torch.linalg.norm(delta.omega.detach()))
    if angle > math.pi - ANTIPODAL_TOL:
        raise InterpolationError(
            f"relative rotation of {math.degrees(angle):.6f} degrees has no unique geodesic")
    return exp(delta.scaled(s)).compose(start)
