"""Pinhole camera model, rigid transforms, and rigid-flow synthesis.

Conventions used throughout the package:
  * right-handed camera frame: x right, y down, z forward,
  * pixel coordinates (u, v) with u along image width; pixel centers sit on
    integer coordinates,
  * Euler angles (rx, ry, rz) compose as R = Rz @ Ry @ Rx (intrinsic
    x-then-y-then-z),
  * a pose maps frame-t point coordinates into frame-(t+1) coordinates:
    X_{t+1} = R @ X_t + T,
  * dense grids are float64 torch tensors, channels first; invalid pixels
    travel as explicit boolean masks, never as sentinel values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ValidationError

DTYPE = torch.float64


def as_tensor(data, shape=None) -> Tensor:
    t = torch.as_tensor(data, dtype=DTYPE)
    if shape is not None and tuple(t.shape) != tuple(shape):
        raise ValidationError(f"expected shape {shape}, got {tuple(t.shape)}")
    return t


def pixel_grid(height: int, width: int) -> Tensor:
    """(2, H, W) grid of pixel coordinates; [0] holds u, [1] holds v."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE),
        torch.arange(width, dtype=DTYPE),
        indexing="ij",
    )
    return torch.stack([u, v], dim=0)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")

    def matrix(self) -> Tensor:
        return as_tensor(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def rays(self, height: int, width: int) -> Tensor:
        """(3, H, W) unit-depth ray directions K^-1 p for the pixel grid."""
        grid = pixel_grid(height, width)
        x = (grid[0] - self.cx) / self.fx
        y = (grid[1] - self.cy) / self.fy
        return torch.stack([x, y, torch.ones_like(x)], dim=0)


@dataclass(frozen=True)
class StereoRig:
    intrinsics: Intrinsics
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValidationError("stereo baseline must be positive")


@dataclass
class Pose6DoF:
    """3 Euler angles (radians) and 3 translation components (meters)."""

    rotation: Tensor
    translation: Tensor

    def __post_init__(self):
        self.rotation = as_tensor(self.rotation, (3,))
        self.translation = as_tensor(self.translation, (3,))

    @classmethod
    def identity(cls) -> "Pose6DoF":
        return cls(torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_vector(cls, vec: Tensor) -> "Pose6DoF":
        vec = torch.as_tensor(vec, dtype=DTYPE)
        return cls(vec[:3], vec[3:6])

    def vector(self) -> Tensor:
        return torch.cat([self.rotation, self.translation])


@dataclass
class RigidTransform:
    rotation: Tensor  # (3, 3)
    translation: Tensor  # (3,)

    def __post_init__(self):
        self.rotation = as_tensor(self.rotation, (3, 3))
        self.translation = as_tensor(self.translation, (3,))
        with torch.no_grad():
            err = (self.rotation @ self.rotation.T - torch.eye(3, dtype=DTYPE)).abs().max()
            det = torch.linalg.det(self.rotation)
        if float(err) > 1e-6 or abs(float(det) - 1.0) > 1e-6:
            raise ValidationError("rotation must be orthonormal with det +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def apply(self, points: Tensor) -> Tensor:
        """Transform an (N, 3) point set."""
        return points @ self.rotation.T + self.translation

    def matrix34(self) -> Tensor:
        return torch.cat([self.rotation, self.translation[:, None]], dim=1)


@dataclass
class DepthMap:
    values: Tensor  # (H, W) meters
    valid: Tensor = None  # (H, W) bool

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 2:
            raise ValidationError("depth values must be 2-D")
        if self.valid is None:
            self.valid = torch.isfinite(self.values) & (self.values > 0)
        self.valid = torch.as_tensor(self.valid, dtype=torch.bool)
        if self.valid.shape != self.values.shape:
            raise ValidationError("depth validity mask shape mismatch")
        bad = self.valid & ~(torch.isfinite(self.values) & (self.values > 0))
        if bool(bad.any()):
            raise ValidationError("valid depth entries must be finite and > 0")

    @classmethod
    def from_values(cls, values) -> "DepthMap":
        values = as_tensor(values)
        return cls(values, torch.isfinite(values) & (values > 0))

    @property
    def shape(self):
        return tuple(self.values.shape)


@dataclass
class DisparityMap:
    values: Tensor  # (H, W) pixels
    valid: Tensor = None  # (H, W) bool

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim != 2:
            raise ValidationError("disparity values must be 2-D")
        if self.valid is None:
            self.valid = torch.isfinite(self.values) & (self.values > 0)
        self.valid = torch.as_tensor(self.valid, dtype=torch.bool)
        if self.valid.shape != self.values.shape:
            raise ValidationError("disparity validity mask shape mismatch")


def disparity_to_depth(disp: DisparityMap, rig: StereoRig) -> DepthMap:
    """Convert stereo disparity (px) to metric depth via D = B * fx / d.

    Pixels with non-positive or non-finite disparity become invalid.
    """
    d = disp.values
    valid = disp.valid & torch.isfinite(d) & (d > 0)
    if not bool(valid.any()):
        raise ValidationError("no valid depth")
    safe = torch.where(valid, d, torch.ones_like(d))
    depth = rig.baseline * rig.intrinsics.fx / safe
    depth = torch.where(valid, depth, torch.zeros_like(depth))
    return DepthMap(depth.masked_fill(~valid, 0.0), valid)


def euler_to_matrix(angles: Tensor) -> Tensor:
    """Rotation matrix for Euler angles (rx, ry, rz), R = Rz @ Ry @ Rx.

    Built from stacked sin/cos so gradients flow back to the angles.
    """
    angles = torch.as_tensor(angles, dtype=DTYPE)
    rx, ry, rz = angles[0], angles[1], angles[2]
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    row0 = torch.stack([cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx])
    row1 = torch.stack([sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx])
    row2 = torch.stack([-sy, cy * sx, cy * cx])
    return torch.stack([row0, row1, row2])


def matrix_to_euler(rotation: Tensor) -> Tensor:
    """Inverse of euler_to_matrix for the Rz @ Ry @ Rx convention."""
    r = torch.as_tensor(rotation, dtype=DTYPE)
    sy = -float(r[2, 0])
    sy = max(-1.0, min(1.0, sy))
    ry = math.asin(sy)
    if abs(sy) < 1.0 - 1e-12:
        rx = math.atan2(float(r[2, 1]), float(r[2, 2]))
        rz = math.atan2(float(r[1, 0]), float(r[0, 0]))
    else:
        # gimbal lock: rz is unrecoverable, fold everything into rx
        rx = math.atan2(-float(r[0, 1]), float(r[1, 1]))
        rz = 0.0
    return as_tensor([rx, ry, rz])


def pose_to_transform(pose: Pose6DoF) -> RigidTransform:
    return RigidTransform(euler_to_matrix(pose.rotation), pose.translation)


def invert_transform(t: RigidTransform) -> RigidTransform:
    r_inv = t.rotation.T
    return RigidTransform(r_inv, -(r_inv @ t.translation))


def compose_transforms(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: (a o b)(x) = a(b(x))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_to_pose(t: RigidTransform) -> Pose6DoF:
    return Pose6DoF(matrix_to_euler(t.rotation), t.translation.clone())


def backproject(depth: DepthMap, k: Intrinsics, pixels: Tensor):
    """Lift pixel coordinates to 3-D points: P = D(p) * K^-1 p.

    pixels: (N, 2) float coordinates; depth is sampled bilinearly at
    non-integer locations. Returns (points (N, 3), valid (N,) bool); points
    whose sample window touches invalid depth or leaves the image are
    flagged invalid.
    """
    from .warp import sample_with_validity  # local import to avoid a cycle

    pixels = as_tensor(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValidationError("pixels must be (N, 2)")
    coords = pixels.T  # (2, N)
    d, ok = sample_with_validity(depth.values[None], depth.valid, coords)
    x = d[0] * (coords[0] - k.cx) / k.fx
    y = d[0] * (coords[1] - k.cy) / k.fy
    points = torch.stack([x, y, d[0]], dim=1)
    return points, ok


def project(points: Tensor, k: Intrinsics):
    """Project (N, 3) camera points to pixels; Z <= 0 points are flagged.

    Returns (pixels (N, 2), in_front (N,) bool). Coordinates of flagged
    points are computed against a clamped depth and must not be used.
    """
    points = as_tensor(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValidationError("points must be (N, 3)")
    z = points[:, 2]
    in_front = z > 0
    safe_z = torch.where(in_front, z, torch.ones_like(z))
    u = k.fx * points[:, 0] / safe_z + k.cx
    v = k.fy * points[:, 1] / safe_z + k.cy
    return torch.stack([u, v], dim=1), in_front


def rigid_flow(depth: DepthMap, pose: Pose6DoF, k: Intrinsics, rays: Tensor = None):
    """Dense flow induced by camera motion over static geometry.

    F(p) = project([R|T] @ (D(p) K^-1 p)) - p at every valid-depth pixel.
    Returns a FlowField whose validity excludes invalid-depth pixels and
    points that land behind the camera. Differentiable w.r.t. the pose.
    `rays` may carry precomputed K^-1 p directions for the pixel grid.
    """
    from .warp import FlowField

    h, w = depth.shape
    if rays is None:
        rays = k.rays(h, w)
    rot = euler_to_matrix(pose.rotation)
    d = torch.where(depth.valid, depth.values, torch.ones_like(depth.values))
    pts = d[None] * rays
    moved = torch.einsum("ij,jhw->ihw", rot, pts) + pose.translation[:, None, None]
    z = moved[2]
    in_front = z > 0
    safe_z = torch.where(in_front, z, torch.ones_like(z))
    u = k.fx * moved[0] / safe_z + k.cx
    v = k.fy * moved[1] / safe_z + k.cy
    grid_u = rays[0] * k.fx + k.cx
    grid_v = rays[1] * k.fy + k.cy
    flow = torch.stack([u - grid_u, v - grid_v], dim=0)
    valid = depth.valid & in_front
    flow = torch.where(valid[None], flow, torch.zeros_like(flow))
    return FlowField(flow, valid)
