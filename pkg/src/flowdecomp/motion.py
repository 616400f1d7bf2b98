"""Instance-level 2D-to-3D motion regression.

Per masked pixel the camera-motion-compensated 3-D displacement is

    v(p) = [R|T]^-1 Omega(D_{t+1}, p + F_tot(p)) - Omega(D_t, p),

with Omega the back-projection and the depth at the flowed location
sampled bilinearly. A seeded single-sample RANSAC picks the representative
motion of each instance; dividing by the frame interval gives velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
import torch
from torch import Tensor

from .errors import ValidationError
from .geometry import (
    DTYPE,
    DepthMap,
    Intrinsics,
    Pose6DoF,
    backproject,
    invert_transform,
    pose_to_transform,
)
from .warp import FlowField


@dataclass
class InstanceMask:
    instance_id: int
    mask: Tensor  # (H, W) bool

    def __post_init__(self):
        self.mask = torch.as_tensor(self.mask, dtype=torch.bool)
        if self.mask.ndim != 2:
            raise ValidationError("instance mask must be 2-D")
        if not bool(self.mask.any()):
            raise ValidationError("instance mask must contain at least one pixel")


@dataclass
class MotionVectorSet:
    vectors: Tensor  # (N, 3) meters/frame
    valid: Tensor  # (N,) bool

    def __post_init__(self):
        bad = self.valid & ~torch.isfinite(self.vectors).all(dim=1)
        if bool(bad.any()):
            raise ValidationError("valid motion vectors must be finite")

    def valid_vectors(self) -> Tensor:
        return self.vectors[self.valid]


@dataclass
class InstanceMotion:
    instance_id: int
    vector: Tensor  # (3,) meters/frame
    magnitude: float
    direction: Tensor  # unit 3-vector; zeros when undefined
    direction_defined: bool
    inlier_ratio: float
    velocity: Optional[float] = None  # m/s, set by to_velocity


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 0.1  # meters
    iterations: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValidationError("RANSAC threshold must be positive")
        if self.iterations < 1:
            raise ValidationError("RANSAC needs at least one iteration")


def instances_from_labels(labels) -> List[InstanceMask]:
    """Split an 8-bit label image (0 = background) into instance masks."""
    arr = torch.as_tensor(np.asarray(labels))
    ids = sorted(int(i) for i in torch.unique(arr).tolist() if i != 0)
    return [InstanceMask(i, arr == i) for i in ids]


def instance_motion_vectors(
    depth_t: DepthMap,
    depth_t1: DepthMap,
    f_tot: FlowField,
    pose: Pose6DoF,
    mask: InstanceMask,
    k: Intrinsics,
) -> MotionVectorSet:
    """Per-pixel 3-D motion vectors of one instance, camera motion removed."""
    if depth_t.shape != f_tot.shape or depth_t1.shape != f_tot.shape:
        raise ValidationError("depth and flow sizes differ")
    if tuple(mask.mask.shape) != depth_t.shape:
        raise ValidationError("instance mask size mismatch")
    idx = mask.mask.nonzero()
    pixels = torch.stack([idx[:, 1], idx[:, 0]], dim=1).to(DTYPE)  # (u, v)
    flow_px = f_tot.values[:, idx[:, 0], idx[:, 1]].T  # (N, 2)
    flow_ok = f_tot.valid[idx[:, 0], idx[:, 1]]

    pts_t, ok_t = backproject(depth_t, k, pixels)
    pts_t1, ok_t1 = backproject(depth_t1, k, pixels + flow_px)
    inv = invert_transform(pose_to_transform(pose))
    vectors = inv.apply(pts_t1) - pts_t
    valid = ok_t & ok_t1 & flow_ok
    if not bool(valid.any()):
        raise ValidationError("instance unobservable")
    vectors = torch.where(valid[:, None], vectors, torch.zeros_like(vectors))
    return MotionVectorSet(vectors, valid)


def ransac_representative(vectors: MotionVectorSet, cfg: RansacConfig) -> InstanceMotion:
    """Seeded mode-seeking RANSAC with a single-vector hypothesis.

    The best hypothesis by inlier count wins (first found on ties under
    the seeded sampling order); the representative is the mean of its
    inlier set.
    """
    vecs = vectors.valid_vectors()
    n = vecs.shape[0]
    if n == 0:
        raise ValidationError("no valid motion vectors")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    candidates = rng.integers(0, n, size=cfg.iterations)
    dists = torch.cdist(vecs[candidates.tolist()], vecs)  # (iters, N)
    inlier_sets = dists <= cfg.threshold
    counts = inlier_sets.sum(dim=1)
    best = int(counts.argmax())  # argmax returns the first maximal index
    inliers = inlier_sets[best]
    rep = vecs[inliers].mean(dim=0)
    magnitude = float(torch.linalg.norm(rep))
    defined = magnitude > 0
    direction = rep / magnitude if defined else torch.zeros(3, dtype=DTYPE)
    return InstanceMotion(
        instance_id=-1,
        vector=rep,
        magnitude=magnitude,
        direction=direction,
        direction_defined=defined,
        inlier_ratio=float(inliers.sum()) / n,
    )


def to_velocity(m: InstanceMotion, frame_interval: float) -> InstanceMotion:
    """Convert meters/frame to meters/second; direction is unchanged."""
    if not frame_interval > 0:
        raise ValidationError("frame interval must be positive")
    return replace(m, velocity=m.magnitude / frame_interval)


def format_motion_line(m: InstanceMotion) -> str:
    v = m.vector
    return (
        f"{m.instance_id} {m.magnitude:.6f} {float(v[0]):.6f} {float(v[1]):.6f} "
        f"{float(v[2]):.6f} {m.velocity:.6f} {m.inlier_ratio:.4f}"
    )


def estimate_instance_motion(
    depth_t: DepthMap,
    depth_t1: DepthMap,
    f_tot: FlowField,
    pose: Pose6DoF,
    mask: InstanceMask,
    k: Intrinsics,
    cfg: RansacConfig = RansacConfig(),
    frame_interval: float = 0.1,
) -> InstanceMotion:
    """Full per-instance pipeline: vectors -> RANSAC -> velocity."""
    vectors = instance_motion_vectors(depth_t, depth_t1, f_tot, pose, mask, k)
    rep = ransac_representative(vectors, cfg)
    rep = replace(rep, instance_id=mask.instance_id)
    return to_velocity(rep, frame_interval)
