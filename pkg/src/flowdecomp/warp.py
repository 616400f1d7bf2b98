"""Differentiable bilinear sampling and flow-based image synthesis.

Sampling clamps taps to the image border and reports an in-bounds bit per
pixel instead of zero-filling, so losses can exclude border fabrications
without seeing spurious gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ValidationError
from .geometry import DTYPE, as_tensor, pixel_grid


@dataclass
class Image:
    values: Tensor  # (C, H, W) in [0, 1]

    def __post_init__(self):
        self.values = as_tensor(self.values)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.ndim != 3:
            raise ValidationError("image values must be (C, H, W)")
        if not bool(torch.isfinite(self.values).all()):
            raise ValidationError("image values must be finite")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise ValidationError("image values must lie in [0, 1]")

    @property
    def shape(self):
        return tuple(self.values.shape)

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class FlowField:
    values: Tensor  # (2, H, W); [0] = u displacement, [1] = v displacement
    valid: Tensor = None  # (H, W) bool

    def __post_init__(self):
        self.values = torch.as_tensor(self.values, dtype=DTYPE)
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise ValidationError("flow values must be (2, H, W)")
        if self.valid is None:
            self.valid = torch.ones(self.values.shape[1:], dtype=torch.bool)
        self.valid = torch.as_tensor(self.valid, dtype=torch.bool)
        if self.valid.shape != self.values.shape[1:]:
            raise ValidationError("flow validity mask shape mismatch")
        with torch.no_grad():
            bad = self.valid & ~torch.isfinite(self.values).all(dim=0)
        if bool(bad.any()):
            raise ValidationError("valid flow entries must be finite")

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(torch.zeros(2, height, width, dtype=DTYPE))

    @classmethod
    def _fast(cls, values: Tensor, valid: Tensor) -> "FlowField":
        """Construct without validation (hot loops on already-checked data)."""
        obj = object.__new__(cls)
        obj.values = values
        obj.valid = valid
        return obj

    @property
    def shape(self):
        return tuple(self.valid.shape)


@dataclass
class SampleResult:
    values: Tensor  # (C, H, W)
    in_bounds: Tensor  # (H, W) bool


def _bilinear_core(src: Tensor, coords: Tensor):
    """4-tap bilinear sampling with border clamping.

    src: (C, H, W); coords: (2, ...) target coordinates in pixels.
    Returns (values (C, ...), in_bounds (...)). Differentiable w.r.t.
    coords; at integer lattice points the right-sided derivative is used
    (floor carries no gradient, so the fractional part has slope one).
    """
    c, h, w = src.shape
    u, v = coords[0], coords[1]
    in_bounds = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = u.clamp(0, w - 1)
    vc = v.clamp(0, h - 1)
    x0 = uc.floor()
    y0 = vc.floor()
    fu = uc - x0
    fv = vc - y0
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)
    row0 = y0i * w
    row1 = y1i * w
    idx = torch.stack([row0 + x0i, row0 + x1i, row1 + x0i, row1 + x1i])
    taps = src.reshape(c, h * w).index_select(1, idx.reshape(-1)).reshape(c, 4, -1)
    shape = x0i.shape
    fu = fu.reshape(-1)
    fv = fv.reshape(-1)
    top = taps[:, 0] + fu * (taps[:, 1] - taps[:, 0])
    bot = taps[:, 2] + fu * (taps[:, 3] - taps[:, 2])
    return (top + fv * (bot - top)).reshape(c, *shape), in_bounds


def sample_with_validity(src: Tensor, src_valid: Tensor, coords: Tensor):
    """Bilinear sample with validity propagation.

    A sample is valid only if it is in bounds and every tap that carries
    weight is valid (zero-weight border taps cannot invalidate).
    """
    stacked = torch.cat([src, src_valid[None].to(DTYPE)], dim=0)
    vals, in_bounds = _bilinear_core(stacked, coords)
    ok = in_bounds & (vals[-1] >= 1.0 - 1e-9)
    return vals[:-1], ok


def bilinear_sample(src: Image, coords: Tensor) -> SampleResult:
    """Sample src at per-pixel target coordinates (2, H, W)."""
    coords = torch.as_tensor(coords, dtype=DTYPE)
    if coords.shape[0] != 2:
        raise ValidationError("coords must have a leading dimension of 2")
    if not bool(torch.isfinite(coords).all()):
        raise ValidationError("coords must be finite")
    values, in_bounds = _bilinear_core(src.values, coords)
    return SampleResult(values, in_bounds)


def warp_image(src: Image, flow: FlowField) -> SampleResult:
    """Inverse-warp src by a flow field: out(x) = src(x + flow(x)).

    With src = I_{t+1} and the rigid flow t->t+1 this synthesizes the
    rigidly warped target view. Pixels with invalid flow are flagged.
    """
    if (src.height, src.width) != flow.shape:
        raise ValidationError("image and flow sizes differ")
    coords = pixel_grid(src.height, src.width) + flow.values
    values, in_bounds = _bilinear_core(src.values, coords)
    return SampleResult(values, in_bounds & flow.valid)


def lookup_flow(f_bwd: FlowField, f_fwd: FlowField) -> FlowField:
    """Sample the reverse flow at forward-flowed locations.

    Returns f_bwd evaluated at x + f_fwd(x) for every pixel x; validity
    requires the lookup to stay inside the image and to touch only valid
    source flow.
    """
    if f_bwd.shape != f_fwd.shape:
        raise ValidationError("flow field sizes differ")
    h, w = f_fwd.shape
    coords = pixel_grid(h, w) + f_fwd.values
    values, ok = sample_with_validity(f_bwd.values, f_bwd.valid, coords)
    return FlowField(values, ok & f_fwd.valid)
