"""Flow and odometry evaluation: endpoint error, F1, and snippet ATE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch
from torch import Tensor

from .errors import ValidationError
from .geometry import (
    DTYPE,
    Pose6DoF,
    RigidTransform,
    compose_transforms,
    invert_transform,
    pose_to_transform,
    transform_to_pose,
)
from .warp import FlowField


@dataclass
class FlowEval:
    epe_all: float
    epe_noc: float
    f1_all: float  # percent of erroneous pixels
    n_valid: int
    n_noc: int


@dataclass
class OdomEval:
    ate_mean: float
    ate_std: float
    snippet_length: int
    n_snippets: int


def _endpoint_error(f_est: FlowField, f_gt: FlowField) -> Tensor:
    if f_est.shape != f_gt.shape:
        raise ValidationError("flow field sizes differ")
    return torch.linalg.norm(f_est.values - f_gt.values, dim=0)


def epe(
    f_est: FlowField,
    f_gt: FlowField,
    valid_gt: Optional[Tensor] = None,
    noc: Optional[Tensor] = None,
) -> FlowEval:
    """Mean endpoint error over valid GT pixels (All) and valid & noc (Noc)."""
    err = _endpoint_error(f_est, f_gt)
    valid = f_gt.valid if valid_gt is None else (f_gt.valid & valid_gt.to(torch.bool))
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValidationError("no valid pixels")
    epe_all = float(err[valid].mean())
    if noc is None:
        noc_mask = valid
    else:
        noc_mask = valid & noc.to(torch.bool)
    n_noc = int(noc_mask.sum())
    epe_noc = float(err[noc_mask].mean()) if n_noc else math.nan
    return FlowEval(epe_all, epe_noc, f1(f_est, f_gt, valid), n_valid, n_noc)


def f1(f_est: FlowField, f_gt: FlowField, valid_gt: Optional[Tensor] = None) -> float:
    """Percent of erroneous pixels: error >= 3 px and >= 5% of |f_gt|.

    Equivalently, a pixel is correct iff its endpoint error is < 3 px or
    < 5% of the GT magnitude.
    """
    err = _endpoint_error(f_est, f_gt)
    valid = f_gt.valid if valid_gt is None else (f_gt.valid & valid_gt.to(torch.bool))
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValidationError("no valid pixels")
    mag = torch.linalg.norm(f_gt.values, dim=0)
    bad = (err >= 3.0) & (err >= 0.05 * mag) & valid
    return 100.0 * float(bad.sum()) / n_valid


@dataclass
class Trajectory:
    """Frame-to-frame camera motion steps plus accumulated global poses.

    steps[k] expresses frame-(k+1) coordinates in frame k (the camera
    motion step), so globals obey global[k+1] = global[k] o step[k] and
    global[k] maps frame-k coordinates into frame-0 (camera-to-world,
    the KITTI odometry convention). Note this is the inverse of the
    point-transform direction used by the pose solver.
    """

    steps: List[Pose6DoF]
    globals_: List[RigidTransform] = field(default_factory=list)

    def __post_init__(self):
        if not self.globals_:
            acc = [RigidTransform.identity()]
            for step in self.steps:
                acc.append(compose_transforms(acc[-1], pose_to_transform(step)))
            self.globals_ = acc
        if len(self.globals_) != len(self.steps) + 1:
            raise ValidationError("trajectory global/step lengths inconsistent")

    @classmethod
    def from_point_transforms(cls, poses: Sequence[Pose6DoF]) -> "Trajectory":
        """Build from solver poses (frame-t -> frame-t+1 point transforms)."""
        steps = [transform_to_pose(invert_transform(pose_to_transform(p))) for p in poses]
        return cls(steps)

    @classmethod
    def from_global_transforms(cls, transforms: Sequence[RigidTransform]) -> "Trajectory":
        if not transforms:
            raise ValidationError("empty trajectory")
        steps = []
        for a, b in zip(transforms[:-1], transforms[1:]):
            steps.append(transform_to_pose(compose_transforms(invert_transform(a), b)))
        return cls(steps, list(transforms))

    def __len__(self) -> int:
        return len(self.globals_)


def ate(traj_est: Trajectory, traj_gt: Trajectory, snippet_len: int = 5) -> OdomEval:
    """Absolute trajectory error over scale-aligned pose snippets.

    Every window of `snippet_len` consecutive global poses is re-based at
    its first pose; a least-squares scale aligns the estimated snippet
    translations to GT and the RMS translation residual is recorded. The
    mean and std over all windows are returned.
    """
    if len(traj_est) != len(traj_gt):
        raise ValidationError("trajectory lengths differ")
    if snippet_len < 2:
        raise ValidationError("snippet length must be >= 2")
    n = len(traj_est)
    if n < snippet_len:
        raise ValidationError("trajectory shorter than the snippet length")
    errors = []
    for start in range(n - snippet_len + 1):
        a = _rebased_translations(traj_est.globals_, start, snippet_len)
        b = _rebased_translations(traj_gt.globals_, start, snippet_len)
        denom = float((a * a).sum())
        scale = float((a * b).sum()) / denom if denom > 1e-12 else 1.0
        resid = scale * a - b
        errors.append(math.sqrt(float((resid * resid).sum()) / snippet_len))
    mean = sum(errors) / len(errors)
    var = sum((e - mean) ** 2 for e in errors) / len(errors)
    return OdomEval(mean, math.sqrt(var), snippet_len, len(errors))


def _rebased_translations(globals_: List[RigidTransform], start: int, length: int) -> Tensor:
    base_inv = invert_transform(globals_[start])
    rows = [
        compose_transforms(base_inv, globals_[start + k]).translation for k in range(length)
    ]
    return torch.stack(rows)


def pose_error(est: Pose6DoF, gt: Pose6DoF):
    """(rotation error deg, translation error m, relative translation error)."""
    r_est = pose_to_transform(est).rotation
    r_gt = pose_to_transform(gt).rotation
    rel = r_est @ r_gt.T
    cos = (torch.trace(rel) - 1.0) / 2.0
    rot_deg = math.degrees(math.acos(max(-1.0, min(1.0, float(cos)))))
    dt = float(torch.linalg.norm(est.translation - gt.translation))
    mag = float(torch.linalg.norm(gt.translation))
    rel_t = dt / mag if mag > 0 else dt
    return rot_deg, dt, rel_t
