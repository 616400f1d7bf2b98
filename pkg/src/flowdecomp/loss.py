"""Scalar objectives: SSIM-blended photometric error, flow-consistency
validity masks, masked warping losses, and depth-aware smoothness.

All losses are written as masked means so their scale is independent of
resolution; validity masks are recomputed by callers each evaluation but
treated as constants under differentiation (the consistency indicator is
not differentiable).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ValidationError
from .geometry import DTYPE
from .warp import FlowField, Image, SampleResult, lookup_flow


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.7
    ssim_window: int = 3
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValidationError("ssim window must be odd and >= 1")


@dataclass(frozen=True)
class MaskConfig:
    gamma1: float = 0.01
    gamma2: float = 0.5  # px^2

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("mask thresholds must be nonnegative")


@dataclass(frozen=True)
class LossWeights:
    w_rig: float
    w_tot: float
    w_das: float

    def __post_init__(self):
        if min(self.w_rig, self.w_tot, self.w_das) < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.w_rig == self.w_tot == self.w_das == 0:
            raise ValidationError("at least one loss weight must be nonzero")


@dataclass
class ErrorMap:
    values: Tensor  # (H, W), >= 0
    valid: Tensor  # (H, W) bool


def _pad_replicate(x: Tensor, r: int) -> Tensor:
    x = torch.cat([x[:, :1].expand(-1, r, -1), x, x[:, -1:].expand(-1, r, -1)], dim=1)
    return torch.cat([x[:, :, :1].expand(-1, -1, r), x, x[:, :, -1:].expand(-1, -1, r)], dim=2)


def _box_mean(x: Tensor, window: int) -> Tensor:
    """Uniform box filter with border-replicated padding, stride 1."""
    padded = _pad_replicate(x, window // 2)
    return F.avg_pool2d(padded[None], window, stride=1)[0]


def _ssim_raw(x: Tensor, y: Tensor, cfg: PhotometricConfig) -> Tensor:
    # one fused box filter over [x, y, x^2, y^2, xy]
    c = x.shape[0]
    stats = _box_mean(torch.cat([x, y, x * x, y * y, x * y], dim=0), cfg.ssim_window)
    mu_x, mu_y = stats[:c], stats[c : 2 * c]
    sigma_x = stats[2 * c : 3 * c] - mu_x * mu_x
    sigma_y = stats[3 * c : 4 * c] - mu_y * mu_y
    sigma_xy = stats[4 * c :] - mu_x * mu_y
    num = (2 * mu_x * mu_y + cfg.ssim_c1) * (2 * sigma_xy + cfg.ssim_c2)
    den = (mu_x * mu_x + mu_y * mu_y + cfg.ssim_c1) * (sigma_x + sigma_y + cfg.ssim_c2)
    return num / den


def ssim_map(a: Image, b: Image, cfg: PhotometricConfig) -> Tensor:
    """Per-pixel, per-channel structural similarity in [-1, 1]."""
    if a.shape != b.shape:
        raise ValidationError("image sizes differ")
    return _ssim_raw(a.values, b.values, cfg)


def _photometric_raw(target: Tensor, synth: Tensor, cfg: PhotometricConfig) -> Tensor:
    l1 = (target - synth).abs()
    ssim = _ssim_raw(target, synth, cfg)
    per_channel = (1.0 - cfg.alpha) * l1 + cfg.alpha * (1.0 - ssim)
    return per_channel.mean(dim=0)


def _photometric_groups(target: Tensor, synth: Tensor, groups: int, cfg: PhotometricConfig):
    """Photometric error for several images stacked along the channel axis.

    target/synth hold `groups` images of equal channel count; returns one
    channel-averaged error map per group (single fused SSIM pass).
    """
    l1 = (target - synth).abs()
    ssim = _ssim_raw(target, synth, cfg)
    per_channel = (1.0 - cfg.alpha) * l1 + cfg.alpha * (1.0 - ssim)
    c = per_channel.shape[0] // groups
    return [per_channel[g * c : (g + 1) * c].mean(dim=0) for g in range(groups)]


def photometric_error(target: Image, synthesized: SampleResult, cfg: PhotometricConfig) -> ErrorMap:
    """(1 - alpha) * |I - I_hat|_1 + alpha * (1 - SSIM), channel-averaged.

    Out-of-bounds synthesis pixels keep finite values but carry an invalid
    mark so downstream masking can drop them.
    """
    if target.shape != tuple(synthesized.values.shape):
        raise ValidationError("image sizes differ")
    return ErrorMap(
        _photometric_raw(target.values, synthesized.values, cfg), synthesized.in_bounds.clone()
    )


def validity_mask(f_fwd: FlowField, f_bwd: FlowField, cfg: MaskConfig) -> Tensor:
    """Forward-backward consistency mask (1 = consistent).

    A pixel fails when |F_fwd(x) + F_bwd(x + F_fwd(x))|^2 exceeds
    gamma1 * (|F_fwd(x)|^2 + |F_bwd(x + F_fwd(x))|^2) + gamma2; pixels
    whose lookup leaves the image (or hits invalid flow) are set to 0.
    """
    looked = lookup_flow(f_bwd, f_fwd)
    sq_sum = ((f_fwd.values + looked.values) ** 2).sum(dim=0)
    mag = (f_fwd.values**2).sum(dim=0) + (looked.values**2).sum(dim=0)
    consistent = sq_sum <= cfg.gamma1 * mag + cfg.gamma2
    return consistent & looked.valid


def masked_mean(values: Tensor, mask: Tensor) -> Tensor:
    """Mean of values over mask; raises if the mask is empty."""
    count = int(mask.sum())
    if count == 0:
        raise ValidationError("no valid pixels")
    return (values * mask.to(values.dtype)).sum() / count


def masked_warp_loss(e: ErrorMap, m: Tensor) -> Tensor:
    """Masked mean photometric error (identical form for rigid and total).

    Normalized by the count of contributing pixels; pixels flagged invalid
    in the error map (depth/bounds) are excluded from sum and count.
    """
    if m.shape != e.values.shape:
        raise ValidationError("mask and error map sizes differ")
    return masked_mean(e.values, m.to(torch.bool) & e.valid)


def _second_diff(x: Tensor, axis: int) -> Tensor:
    if axis == 0:
        return x[..., 2:, :] - 2 * x[..., 1:-1, :] + x[..., :-2, :]
    return x[..., :, 2:] - 2 * x[..., :, 1:-1] + x[..., :, :-2]


def _window_valid(valid: Tensor, axis: int) -> Tensor:
    if axis == 0:
        return valid[2:, :] & valid[1:-1, :] & valid[:-2, :]
    return valid[:, 2:] & valid[:, 1:-1] & valid[:, :-2]


def _smoothness_weights(depth):
    """Constant per-depth-map smoothness weights exp(-|d2 D|), zeroed where
    the second-difference window touches invalid depth; returns
    (wx (H, W-2), wy (H-2, W), term count)."""
    d = torch.where(depth.valid, depth.values, torch.zeros_like(depth.values))
    wx = torch.exp(-_second_diff(d, 1).abs()) * _window_valid(depth.valid, 1).to(DTYPE)
    wy = torch.exp(-_second_diff(d, 0).abs()) * _window_valid(depth.valid, 0).to(DTYPE)
    count = int(_window_valid(depth.valid, 1).sum() + _window_valid(depth.valid, 0).sum())
    return wx, wy, count


def _smoothness_fast(flow_values: Tensor, wx: Tensor, wy: Tensor, count: int) -> Tensor:
    """Smoothness term for an everywhere-valid flow with precomputed weights."""
    if count == 0:
        return torch.zeros((), dtype=DTYPE)
    tx = (_second_diff(flow_values, 1).abs().sum(dim=0) * wx).sum()
    ty = (_second_diff(flow_values, 0).abs().sum(dim=0) * wy).sum()
    return (tx + ty) / count


def depth_aware_smoothness(depth, f_res: FlowField) -> Tensor:
    """Second-order flow smoothness gated by depth curvature.

    Per direction d in {x, y}: |d2 F_res|_1 * exp(-|d2 D|), with central
    second differences, the one-pixel boundary excluded, and the result
    mean-normalized over contributing (pixel, direction) terms.
    """
    if depth.shape != f_res.shape:
        raise ValidationError("depth and flow sizes differ")
    d = torch.where(depth.valid, depth.values, torch.zeros_like(depth.values))
    total = None
    count = 0
    for axis in (1, 0):
        flow_d2 = _second_diff(f_res.values, axis).abs().sum(dim=0)
        depth_d2 = _second_diff(d, axis).abs()
        ok = _window_valid(depth.valid & f_res.valid, axis)
        term = (flow_d2 * torch.exp(-depth_d2) * ok.to(DTYPE)).sum()
        total = term if total is None else total + term
        count += int(ok.sum())
    if count == 0:
        return torch.zeros((), dtype=DTYPE)
    return total / count


def combined_loss(l_rig: Tensor, l_tot: Tensor, l_das: Tensor, w: LossWeights) -> Tensor:
    return w.w_rig * l_rig + w.w_tot * l_tot + w.w_das * l_das
