"""Directly optimized parameter fields and the multi-phase solver.

The camera pose is a 6-vector and the residual flow is a 4-level pyramid
of per-pixel 2-vector grids; both are fit per frame pair by minimizing the
phase-weighted combination of the rigid warping loss, total warping loss,
and depth-aware smoothness with a bias-corrected adaptive-moment stepper.

Phases:
  1. pose only, rigid warping loss (both time directions independently),
  2. residual pyramids only with pose frozen, total + smoothness losses,
  3. joint refinement; the rigid term is masked by the total-flow
     consistency mask (switchable via config).

Validity masks are recomputed from the current flows every iteration but
enter the objective as constants, so the returned gradients are exact
derivatives of the mask-frozen objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import DivergenceError, ValidationError
from .geometry import DTYPE, DepthMap, Intrinsics, Pose6DoF, rigid_flow
from .loss import (
    ErrorMap,
    LossWeights,
    MaskConfig,
    PhotometricConfig,
    _photometric_groups,
    _smoothness_fast,
    masked_mean,
    depth_aware_smoothness,
    photometric_error,
    validity_mask,
)
from .warp import FlowField, Image, warp_image

ADAM_EPS = 1e-8
POSE_LR_SCALE_PHASE3 = 0.05
PHASE2_NEUTRALIZE_AFTER = 0.15
FORWARD, BACKWARD = 0, 1


@dataclass
class PoseParams:
    """The six optimizable scalars of a camera pose (rx, ry, rz, tx, ty, tz)."""

    values: Tensor

    def __post_init__(self):
        self.values = torch.as_tensor(self.values, dtype=DTYPE)
        if self.values.shape != (6,):
            raise ValidationError("pose parameters must be a 6-vector")
        if not bool(torch.isfinite(self.values).all()):
            raise ValidationError("pose parameters must be finite")

    @classmethod
    def zeros(cls) -> "PoseParams":
        return cls(torch.zeros(6, dtype=DTYPE))

    def as_pose(self) -> Pose6DoF:
        return Pose6DoF.from_vector(self.values)


def _level_size(full: int, level: int) -> int:
    return max(1, math.ceil(full / 2**level))


@dataclass
class ResidualFlowPyramid:
    """Multi-scale residual flow grids, forward and backward in time.

    Level k holds a (2, ceil(H/2^k), ceil(W/2^k)) grid whose values are in
    level-k pixel units; composition upsamples and rescales by 2^k.
    """

    height: int
    width: int
    fwd: List[Tensor]
    bwd: List[Tensor]

    def __post_init__(self):
        if len(self.fwd) != len(self.bwd):
            raise ValidationError("forward/backward level counts differ")
        for levels in (self.fwd, self.bwd):
            for k, grid in enumerate(levels):
                want = (2, _level_size(self.height, k), _level_size(self.width, k))
                if tuple(grid.shape) != want:
                    raise ValidationError(f"level {k} grid must have shape {want}")
                if not bool(torch.isfinite(grid).all()):
                    raise ValidationError("pyramid values must be finite")

    @classmethod
    def zeros(cls, height: int, width: int, levels: int = 4) -> "ResidualFlowPyramid":
        make = lambda: [
            torch.zeros(2, _level_size(height, k), _level_size(width, k), dtype=DTYPE)
            for k in range(levels)
        ]
        return cls(height, width, make(), make())

    @property
    def levels(self) -> int:
        return len(self.fwd)

    def detached(self) -> "ResidualFlowPyramid":
        return ResidualFlowPyramid(
            self.height,
            self.width,
            [g.detach().clone() for g in self.fwd],
            [g.detach().clone() for g in self.bwd],
        )


def compose_residual(levels: Sequence[Tensor], size: Tuple[int, int]) -> FlowField:
    """Sum of bilinearly upsampled pyramid levels, level k scaled by 2^k."""
    h, w = size
    total = None
    for k, grid in enumerate(levels):
        if grid.shape[1:] == (h, w):
            up = grid
        else:
            up = F.interpolate(grid[None], size=(h, w), mode="bilinear", align_corners=True)[0]
        term = up * float(2**k)
        total = term if total is None else total + term
    if total is None:
        raise ValidationError("pyramid has no levels")
    return FlowField(total)


@dataclass(frozen=True)
class PhaseConfig:
    phase: int
    weights: LossWeights
    lr: float
    max_iters: int = 3000
    tol: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    # deterministic exponential annealing: the step size decays from lr to
    # lr * lr_end_scale across max_iters
    lr_end_scale: float = 1e-4

    def __post_init__(self):
        if self.phase not in (1, 2, 3):
            raise ValidationError("phase index must be 1, 2, or 3")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("moment decay rates must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0 < self.lr_end_scale <= 1:
            raise ValidationError("lr_end_scale must lie in (0, 1]")


def default_phase_config(phase: int) -> PhaseConfig:
    if phase == 1:
        return PhaseConfig(1, LossWeights(0.2, 0.0, 0.0), lr=1e-2)
    if phase == 2:
        return PhaseConfig(2, LossWeights(0.0, 1.0, 0.2), lr=5e-2, lr_end_scale=0.1)
    return PhaseConfig(3, LossWeights(0.1, 1.0, 0.2), lr=2e-2, lr_end_scale=1e-2)


@dataclass(frozen=True)
class PipelineConfig:
    photometric: PhotometricConfig = PhotometricConfig()
    mask: MaskConfig = MaskConfig()
    phase1: PhaseConfig = field(default_factory=lambda: default_phase_config(1))
    phase2: PhaseConfig = field(default_factory=lambda: default_phase_config(2))
    phase3: PhaseConfig = field(default_factory=lambda: default_phase_config(3))
    multiscale: bool = True
    n_scales: int = 4
    phase3_rigid_mask_total: bool = True
    seed: int = 0

    def phase(self, n: int) -> PhaseConfig:
        return (self.phase1, self.phase2, self.phase3)[n - 1]


@dataclass
class OptimizerState:
    m: List[Tensor]
    v: List[Tensor]
    step: int = 0

    @classmethod
    def initial(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adaptive_step(
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    state: OptimizerState,
    cfg: PhaseConfig,
    lr: Optional[float] = None,
    lr_scales: Optional[Sequence[float]] = None,
) -> Tuple[List[Tensor], OptimizerState]:
    """One bias-corrected adaptive-moment update (deterministic).

    lr_scales optionally rescales the step size per parameter group.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("parameter/gradient/state lengths differ")
    lr = cfg.lr if lr is None else lr
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValidationError(f"gradient {i} shape mismatch")
        if not bool(torch.isfinite(g).all()):
            raise DivergenceError(f"non-finite gradient for parameter group {i}")
        m = cfg.beta1 * state.m[i] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        step_lr = lr * (lr_scales[i] if lr_scales is not None else 1.0)
        new_params.append(p.detach() - step_lr * m_hat / (v_hat.sqrt() + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimizerState(new_m, new_v, t)


@dataclass
class SceneInputs:
    image_t: Image
    image_t1: Image
    depth_t: DepthMap
    depth_t1: DepthMap
    intrinsics: Intrinsics

    def __post_init__(self):
        hw = (self.image_t.height, self.image_t.width)
        for name, shape in [
            ("image_t1", (self.image_t1.height, self.image_t1.width)),
            ("depth_t", self.depth_t.shape),
            ("depth_t1", self.depth_t1.shape),
        ]:
            if shape != hw:
                raise ValidationError(f"{name} size {shape} != image_t size {hw}")

    @property
    def size(self) -> Tuple[int, int]:
        return self.image_t.height, self.image_t.width


def _pool_image(img: Image) -> Image:
    return Image(F.avg_pool2d(img.values[None], 2)[0])


def _pool_depth(d: DepthMap) -> DepthMap:
    vals = torch.where(d.valid, d.values, torch.zeros_like(d.values))
    pooled = F.avg_pool2d(vals[None, None], 2)[0, 0]
    ok = F.avg_pool2d(d.valid.to(DTYPE)[None, None], 2)[0, 0] >= 1.0 - 1e-9
    return DepthMap(pooled.masked_fill(~ok, 0.0), ok)


def _pool_flow(flow: FlowField) -> FlowField:
    stacked = torch.cat([flow.values, flow.valid[None].to(DTYPE)], dim=0)
    pooled = F.avg_pool2d(stacked[None], 2)[0]
    ok = pooled[2] >= 1.0 - 1e-9
    vals = pooled[:2] * 0.5
    return FlowField._fast(torch.where(ok[None], vals, torch.zeros_like(vals)), ok)


def _pool_mask(mask: Tensor) -> Tensor:
    """Pooled mask is set only where every contributing pixel is set."""
    return F.avg_pool2d(mask.to(DTYPE)[None, None], 2)[0, 0] >= 1.0 - 1e-9


def _scaled_intrinsics(k: Intrinsics, level: int) -> Intrinsics:
    s = 0.5**level
    return Intrinsics(k.fx * s, k.fy * s, k.cx * s, k.cy * s)


class _SceneCache:
    """Per-scale pooled images, depths, and pixel grids, shared across iterations."""

    def __init__(self, inputs: SceneInputs, n_scales: int):
        from .geometry import pixel_grid

        self.intrinsics = inputs.intrinsics
        self.size = inputs.size
        self.images_t = [inputs.image_t]
        self.images_t1 = [inputs.image_t1]
        self.depths_t = [inputs.depth_t]
        self.depths_t1 = [inputs.depth_t1]
        for _ in range(1, n_scales):
            if min(self.images_t[-1].values.shape[1:]) < 2:
                break
            self.images_t.append(_pool_image(self.images_t[-1]))
            self.images_t1.append(_pool_image(self.images_t1[-1]))
            self.depths_t.append(_pool_depth(self.depths_t[-1]))
            self.depths_t1.append(_pool_depth(self.depths_t1[-1]))
        self.grids = [
            pixel_grid(img.height, img.width) for img in self.images_t
        ]
        self.rays = self.intrinsics.rays(*self.size)
        self.all_valid = [
            torch.ones(img.height, img.width, dtype=torch.bool) for img in self.images_t
        ]
        from .loss import _smoothness_weights

        self.smooth_weights = [
            [_smoothness_weights(d) for d in self.depths_t],
            [_smoothness_weights(d) for d in self.depths_t1],
        ]

    @property
    def n_scales(self) -> int:
        return len(self.images_t)

    def frames(self, direction: int):
        """(target, source, target depth) image/depth pyramids for a direction."""
        if direction == FORWARD:
            return self.images_t, self.images_t1, self.depths_t
        return self.images_t1, self.images_t, self.depths_t1


@dataclass
class FrozenMasks:
    """Validity masks captured at one evaluation point.

    Passing these back into the objective yields the exact mask-frozen
    function that the analytic gradients differentiate, which is what
    finite-difference checks must probe. Indexed [direction][scale].
    """

    rig: List[List[Tensor]]
    tot: List[List[Tensor]]


@dataclass
class ObjectiveValue:
    total: Tensor
    terms: Dict[str, float]
    frozen: FrozenMasks


def _flow_scales(flow: FlowField, n: int) -> List[FlowField]:
    out = [flow]
    for _ in range(1, n):
        out.append(_pool_flow(out[-1]))
    return out


def _flow_scales_dense(flow: FlowField, n: int, all_valid: List[Tensor]) -> List[FlowField]:
    """Pooled pyramid of an everywhere-valid flow (no validity tracking)."""
    out = [flow]
    for s in range(1, n):
        vals = F.avg_pool2d(out[-1].values[None], 2)[0] * 0.5
        out.append(FlowField._fast(vals, all_valid[s]))
    return out


def evaluate_losses(
    inputs_or_cache,
    pose_fwd: Tensor,
    pose_bwd: Tensor,
    pyramid: Optional[ResidualFlowPyramid],
    cfg: PipelineConfig,
    weights: LossWeights,
    rigid_mask_total: bool = False,
    frozen: Optional[FrozenMasks] = None,
    fixed_rigid: Optional[List[FlowField]] = None,
    neutralize_all_scales: bool = True,
) -> ObjectiveValue:
    """Mask-frozen phase objective over both time directions.

    pose_* are 6-vectors; pyramid may be None when the residual flow is
    identically zero (phase 1). Masks are taken from `frozen` when given,
    otherwise recomputed from the current (detached) flows.
    """
    cache = inputs_or_cache if isinstance(inputs_or_cache, _SceneCache) else _SceneCache(
        inputs_or_cache, cfg.n_scales if cfg.multiscale else 1
    )
    k = cache.intrinsics
    need_tot = weights.w_tot > 0
    need_das = weights.w_das > 0
    need_rig = weights.w_rig > 0
    need_res = need_tot or need_das or (need_rig and rigid_mask_total)
    n_scales = cache.n_scales if cfg.multiscale else 1

    poses = [pose_fwd, pose_bwd]
    rig_flows, res_flows, tot_flows = [], [], []
    for d in (FORWARD, BACKWARD):
        if fixed_rigid is not None:
            f_rig = fixed_rigid[d]
        else:
            depth = cache.depths_t[0] if d == FORWARD else cache.depths_t1[0]
            f_rig = rigid_flow(depth, Pose6DoF.from_vector(poses[d]), k, rays=cache.rays)
        rig_flows.append(f_rig)
        if need_res:
            levels = (pyramid.fwd if d == FORWARD else pyramid.bwd) if pyramid else None
            if levels is None:
                f_res = FlowField.zeros(*cache.size)
            else:
                f_res = compose_residual(levels, cache.size)
            res_flows.append(f_res)
            tot_flows.append(FlowField(f_rig.values + f_res.values, f_rig.valid & f_res.valid))

    rig_scales: List[List[FlowField]] = []
    tot_scales: List[List[FlowField]] = []
    res_scales: List[List[FlowField]] = []
    for d in (FORWARD, BACKWARD):
        if need_rig:
            rig_scales.append([rig_flows[d]])
        if need_res:
            tot_scales.append(_flow_scales(tot_flows[d], n_scales if need_tot else 1))
            res_scales.append(
                _flow_scales_dense(res_flows[d], n_scales if need_das else 1, cache.all_valid)
            )

    if frozen is None:
        frozen = _compute_masks(
            cache, cfg, rig_scales, tot_scales, need_rig, need_tot, rigid_mask_total, n_scales
        )

    # photometric terms for both time directions share one fused SSIM pass
    zero = torch.zeros((), dtype=DTYPE)
    l_rig_dir = [zero, zero]
    l_tot_dir = [zero, zero]
    l_das_dir = [zero, zero]
    # pixels excluded by the mask contribute the target's own content to
    # their neighbors' SSIM windows: their flow then influences neither the
    # loss value nor its gradient, so occluded regions cannot drag valid
    # neighbors (and mask-frozen finite differences stay exact)
    def _neutralized(synth, target, keep):
        return torch.where(keep[None], synth, target)

    if need_rig:
        synth_f = _warp_values(cache.images_t1[0], rig_scales[FORWARD][0], cache.grids[0])
        synth_b = _warp_values(cache.images_t[0], rig_scales[BACKWARD][0], cache.grids[0])
        synth_f = _neutralized(synth_f, cache.images_t[0].values, frozen.rig[FORWARD][0])
        synth_b = _neutralized(synth_b, cache.images_t1[0].values, frozen.rig[BACKWARD][0])
        errs = _photometric_groups(
            torch.cat([cache.images_t[0].values, cache.images_t1[0].values]),
            torch.cat([synth_f, synth_b]),
            2,
            cfg.photometric,
        )
        l_rig_dir = [
            masked_mean(errs[FORWARD], frozen.rig[FORWARD][0]),
            masked_mean(errs[BACKWARD], frozen.rig[BACKWARD][0]),
        ]
    if need_tot:
        per_scale = [[], []]
        for s in range(n_scales):
            synth_f = _warp_values(cache.images_t1[s], tot_scales[FORWARD][s], cache.grids[s])
            synth_b = _warp_values(cache.images_t[s], tot_scales[BACKWARD][s], cache.grids[s])
            if s == 0 or neutralize_all_scales:
                synth_f = _neutralized(synth_f, cache.images_t[s].values, frozen.tot[FORWARD][s])
                synth_b = _neutralized(synth_b, cache.images_t1[s].values, frozen.tot[BACKWARD][s])
            errs = _photometric_groups(
                torch.cat([cache.images_t[s].values, cache.images_t1[s].values]),
                torch.cat([synth_f, synth_b]),
                2,
                cfg.photometric,
            )
            for d in (FORWARD, BACKWARD):
                per_scale[d].append(masked_mean(errs[d], frozen.tot[d][s]))
        l_tot_dir = [torch.stack(per_scale[d]).mean() for d in (FORWARD, BACKWARD)]
    if need_das:
        for d in (FORWARD, BACKWARD):
            terms_s = [
                _smoothness_fast(res_scales[d][s].values, *cache.smooth_weights[d][s])
                for s in range(n_scales)
            ]
            l_das_dir[d] = torch.stack(terms_s).mean()

    dir_losses = []
    terms = {"l_rig": 0.0, "l_tot": 0.0, "l_das": 0.0}
    for d in (FORWARD, BACKWARD):
        for name, val in (("l_rig", l_rig_dir[d]), ("l_tot", l_tot_dir[d]), ("l_das", l_das_dir[d])):
            fval = float(val.detach())
            if not math.isfinite(fval):
                direction = "forward" if d == FORWARD else "backward"
                raise DivergenceError(f"non-finite loss term {name} ({direction})")
            terms[name] += 0.5 * fval
        dir_losses.append(
            weights.w_rig * l_rig_dir[d] + weights.w_tot * l_tot_dir[d] + weights.w_das * l_das_dir[d]
        )

    total = 0.5 * (dir_losses[0] + dir_losses[1])
    terms["total"] = float(total.detach())
    return ObjectiveValue(total, terms, frozen)


def _bounds_ok(flow: FlowField, grid: Tensor, margin: float = 0.0) -> Tensor:
    h, w = flow.shape
    u = grid[0] + flow.values[0]
    v = grid[1] + flow.values[1]
    return (
        (u >= margin)
        & (u <= w - 1 - margin)
        & (v >= margin)
        & (v <= h - 1 - margin)
        & flow.valid
    )


def _warp_values(src: Image, flow: FlowField, grid: Tensor) -> Tensor:
    from .warp import _bilinear_core

    values, _ = _bilinear_core(src.values, grid + flow.values)
    return values


def _mask_cascade(
    cache: _SceneCache,
    cfg: PipelineConfig,
    flows_d: List[FlowField],
    flows_o: List[FlowField],
    n_scales: int,
    margin: float,
) -> List[Tensor]:
    """Eq. 4 consistency at full resolution, pooled down to coarser scales.

    A pooled pixel survives only if every contributing pixel is
    consistent, so inconsistent regions get no coarse-scale supervision
    either; each scale adds its own photometric-support bounds check.
    """
    m0 = validity_mask(flows_d[0], flows_o[0], cfg.mask)
    bounds0 = _bounds_ok(flows_d[0], cache.grids[0], margin)
    masks = [_nonempty(m0 & bounds0, bounds0)]
    for s in range(1, n_scales):
        m = _pool_mask(masks[s - 1])
        bounds = _bounds_ok(flows_d[s], cache.grids[s], margin)
        masks.append(_nonempty(m & bounds, bounds))
    return masks


def _compute_masks(
    cache: _SceneCache,
    cfg: PipelineConfig,
    rig_scales: List[List[FlowField]],
    tot_scales: List[List[FlowField]],
    need_rig: bool,
    need_tot: bool,
    rigid_mask_total: bool,
    n_scales: int,
) -> FrozenMasks:
    # exclude pixels whose photometric support (bilinear taps plus the SSIM
    # window) reaches fabricated border-clamped samples
    margin = cfg.photometric.ssim_window // 2 + 1.0
    with torch.no_grad():
        rig_masks: List[List[Tensor]] = [[], []]
        tot_masks: List[List[Tensor]] = [[], []]
        detach = lambda scales: [FlowField._fast(f.values.detach(), f.valid) for f in scales]
        det_rig = [detach(s) for s in rig_scales]
        det_tot = [detach(s) for s in tot_scales]
        for d in (FORWARD, BACKWARD):
            o = 1 - d
            if need_tot or (need_rig and rigid_mask_total):
                tot_masks[d] = _mask_cascade(
                    cache, cfg, det_tot[d], det_tot[o], n_scales if need_tot else 1, margin
                )
            if need_rig:
                if rigid_mask_total:
                    # phase 3 replaces the rigid-loss mask with the
                    # total-flow consistency mask
                    rig_masks[d] = [tot_masks[d][0]]
                else:
                    rig_masks[d] = _mask_cascade(cache, cfg, det_rig[d], det_rig[o], 1, margin)
    return FrozenMasks(rig_masks, tot_masks)


def _nonempty(mask: Tensor, fallback: Tensor) -> Tensor:
    """Guard against an all-zero consistency mask during optimization.

    Far from convergence the two time directions can disagree everywhere;
    dropping the consistency filter for that iteration (bounds check only)
    keeps the objective defined instead of aborting the solve.
    """
    if bool(mask.any()):
        return mask
    return fallback


@dataclass
class LossGradients:
    pose_fwd: Tensor
    pose_bwd: Tensor
    pyr_fwd: List[Tensor]
    pyr_bwd: List[Tensor]
    loss: float
    frozen: FrozenMasks


def loss_gradients(
    inputs: SceneInputs,
    pose_fwd: PoseParams,
    pose_bwd: PoseParams,
    pyramid: ResidualFlowPyramid,
    cfg: PipelineConfig,
    weights: Optional[LossWeights] = None,
    rigid_mask_total: bool = True,
    frozen: Optional[FrozenMasks] = None,
) -> LossGradients:
    """Exact reverse-accumulation derivatives of the combined loss.

    Masks are treated as per-evaluation constants; use the returned frozen
    masks to evaluate the identical objective at perturbed parameters.
    """
    weights = weights or default_phase_config(3).weights
    pf = pose_fwd.values.detach().clone().requires_grad_(True)
    pb = pose_bwd.values.detach().clone().requires_grad_(True)
    pyr = pyramid.detached()
    params = [pf, pb]
    for levels in (pyr.fwd, pyr.bwd):
        for grid in levels:
            grid.requires_grad_(True)
            params.append(grid)
    value = evaluate_losses(
        inputs, pf, pb, pyr, cfg, weights, rigid_mask_total=rigid_mask_total, frozen=frozen
    )
    grads = torch.autograd.grad(value.total, params, allow_unused=True)
    grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)]
    names = ["pose_fwd", "pose_bwd"] + [f"pyr_fwd[{i}]" for i in range(pyramid.levels)] + [
        f"pyr_bwd[{i}]" for i in range(pyramid.levels)
    ]
    for name, g in zip(names, grads):
        if not bool(torch.isfinite(g).all()):
            raise DivergenceError(f"non-finite gradient for {name}")
    n = pyramid.levels
    return LossGradients(
        grads[0], grads[1], list(grads[2 : 2 + n]), list(grads[2 + n : 2 + 2 * n]),
        float(value.total), value.frozen,
    )


@dataclass
class PhaseResult:
    pose_fwd: Pose6DoF
    pose_bwd: Pose6DoF
    pyramid: Optional[ResidualFlowPyramid]
    loss_history: List[float]
    grad_norm: float
    iterations: int


def _minimize(
    init_params: List[Tensor], closure, cfg: PhaseConfig,
    lr_scales: Optional[Sequence[float]] = None,
) -> Tuple[List[Tensor], List[float], float, int]:
    # single-thread keeps reductions order-fixed and beats inter-op
    # scheduling overhead at these tensor sizes
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _minimize_inner(init_params, closure, cfg, lr_scales)
    finally:
        torch.set_num_threads(n_threads)


def _minimize_inner(
    init_params: List[Tensor], closure, cfg: PhaseConfig,
    lr_scales: Optional[Sequence[float]] = None,
) -> Tuple[List[Tensor], List[float], float, int]:
    params = [p.detach().clone().requires_grad_(True) for p in init_params]
    state = OptimizerState.initial(params)
    decay = cfg.lr_end_scale ** (1.0 / max(1, cfg.max_iters - 1))
    lr = cfg.lr
    increases = 0
    prev = None
    history: List[float] = []
    grad_norm = math.inf
    iterations = 0
    for it in range(cfg.max_iters):
        value = closure(params, it)
        loss = value.total
        lf = float(loss.detach())
        if not math.isfinite(lf):
            raise DivergenceError("non-finite loss")
        history.append(lf)
        iterations = it + 1
        # material growth only: sub-0.1%-per-iteration creep is a normal
        # adaptive-step transient, not divergence
        if prev is not None and lf > prev * (1 + 1e-3):
            increases += 1
            if increases >= 50:
                tail = ", ".join(f"{x:.6e}" for x in history[-10:])
                raise DivergenceError(f"loss increased for 50 consecutive iterations; tail: {tail}")
        else:
            increases = 0
        prev = lf
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)]
        grad_norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        if grad_norm < cfg.tol:
            break
        stepped, state = adaptive_step(
            [p.detach() for p in params], grads, state, cfg, lr=lr, lr_scales=lr_scales
        )
        params = [p.requires_grad_(True) for p in stepped]
        lr *= decay
    return [p.detach() for p in params], history, grad_norm, iterations


def run_phase1(inputs: SceneInputs, cfg: PipelineConfig) -> PhaseResult:
    """Fit forward and backward poses with the rigid warping loss only."""
    cache = _SceneCache(inputs, cfg.n_scales if cfg.multiscale else 1)
    pcfg = cfg.phase1

    def closure(params, it):
        return evaluate_losses(cache, params[0], params[1], None, cfg, pcfg.weights)

    init = [torch.zeros(6, dtype=DTYPE), torch.zeros(6, dtype=DTYPE)]
    params, history, gn, iters = _minimize(init, closure, pcfg)
    return PhaseResult(
        Pose6DoF.from_vector(params[0]), Pose6DoF.from_vector(params[1]), None, history, gn, iters
    )


def run_phase2(
    inputs: SceneInputs, pose_fwd: Pose6DoF, pose_bwd: Pose6DoF, cfg: PipelineConfig
) -> PhaseResult:
    """Fit residual pyramids with the pose frozen bitwise."""
    cache = _SceneCache(inputs, cfg.n_scales if cfg.multiscale else 1)
    pcfg = cfg.phase2
    h, w = cache.size
    pf = pose_fwd.vector().detach()
    pb = pose_bwd.vector().detach()
    k = cache.intrinsics
    with torch.no_grad():
        fixed = [
            rigid_flow(cache.depths_t[0], Pose6DoF.from_vector(pf), k),
            rigid_flow(cache.depths_t1[0], Pose6DoF.from_vector(pb), k),
        ]
    pyramid = ResidualFlowPyramid.zeros(h, w)

    switch_at = int(PHASE2_NEUTRALIZE_AFTER * pcfg.max_iters)

    def closure(params, it):
        # early on, coarse-scale gradients may flow into transiently masked
        # pixels so the capture corridor stays live; once the large motions
        # are captured, every scale is neutralized so occluded regions are
        # governed by smoothness alone
        pyr = ResidualFlowPyramid(h, w, list(params[:4]), list(params[4:]))
        return evaluate_losses(
            cache, pf, pb, pyr, cfg, pcfg.weights, fixed_rigid=fixed,
            neutralize_all_scales=it >= switch_at,
        )

    init = list(pyramid.fwd) + list(pyramid.bwd)
    params, history, gn, iters = _minimize(init, closure, pcfg)
    out = ResidualFlowPyramid(h, w, list(params[:4]), list(params[4:]))
    return PhaseResult(pose_fwd, pose_bwd, out, history, gn, iters)


def run_phase3(
    inputs: SceneInputs,
    pose_fwd: Pose6DoF,
    pose_bwd: Pose6DoF,
    pyramid: ResidualFlowPyramid,
    cfg: PipelineConfig,
) -> PhaseResult:
    """Jointly refine pose and residual pyramids from the warm start."""
    cache = _SceneCache(inputs, cfg.n_scales if cfg.multiscale else 1)
    pcfg = cfg.phase3
    h, w = cache.size

    def closure(params, it):
        pyr = ResidualFlowPyramid(h, w, list(params[2:6]), list(params[6:]))
        return evaluate_losses(
            cache, params[0], params[1], pyr, cfg, pcfg.weights,
            rigid_mask_total=cfg.phase3_rigid_mask_total,
        )

    init = [pose_fwd.vector(), pose_bwd.vector()] + [g for g in pyramid.fwd] + [
        g for g in pyramid.bwd
    ]
    # the warm-started pose needs refinement-sized steps while the flow
    # fields keep full mobility for occluded-region relaxation
    scales = [POSE_LR_SCALE_PHASE3, POSE_LR_SCALE_PHASE3] + [1.0] * (2 * pyramid.levels)
    params, history, gn, iters = _minimize(init, closure, pcfg, lr_scales=scales)
    out = ResidualFlowPyramid(h, w, list(params[2:6]), list(params[6:]))
    return PhaseResult(
        Pose6DoF.from_vector(params[0]), Pose6DoF.from_vector(params[1]), out, history, gn, iters
    )


@dataclass
class DecompositionResult:
    pose: Pose6DoF
    pose_bwd: Pose6DoF
    pyramid: ResidualFlowPyramid
    flow_rig: FlowField
    flow_res: FlowField
    flow_tot: FlowField
    flow_rig_bwd: FlowField
    flow_res_bwd: FlowField
    flow_tot_bwd: FlowField
    mask_rig: Tensor
    mask_tot: Tensor
    err_rig: ErrorMap
    err_tot: ErrorMap
    phase1_pose: Pose6DoF
    phase1_pose_bwd: Pose6DoF
    phase2_pyramid: ResidualFlowPyramid
    histories: Dict[int, List[float]]


def decompose(inputs: SceneInputs, cfg: Optional[PipelineConfig] = None) -> DecompositionResult:
    """Run phases 1 -> 2 -> 3 and assemble flows, masks, and error maps."""
    cfg = cfg or PipelineConfig()
    p1 = run_phase1(inputs, cfg)
    p2 = run_phase2(inputs, p1.pose_fwd, p1.pose_bwd, cfg)
    p3 = run_phase3(inputs, p1.pose_fwd, p1.pose_bwd, p2.pyramid, cfg)
    k = inputs.intrinsics
    with torch.no_grad():
        f_rig = rigid_flow(inputs.depth_t, p3.pose_fwd, k)
        f_rig_b = rigid_flow(inputs.depth_t1, p3.pose_bwd, k)
        f_res = compose_residual(p3.pyramid.fwd, inputs.size)
        f_res_b = compose_residual(p3.pyramid.bwd, inputs.size)
        f_tot = FlowField(f_rig.values + f_res.values, f_rig.valid & f_res.valid)
        f_tot_b = FlowField(f_rig_b.values + f_res_b.values, f_rig_b.valid & f_res_b.valid)
        m_rig = validity_mask(f_rig, f_rig_b, cfg.mask)
        m_tot = validity_mask(f_tot, f_tot_b, cfg.mask)
        err_rig = photometric_error(
            inputs.image_t, warp_image(inputs.image_t1, f_rig), cfg.photometric
        )
        err_tot = photometric_error(
            inputs.image_t, warp_image(inputs.image_t1, f_tot), cfg.photometric
        )
    return DecompositionResult(
        pose=p3.pose_fwd,
        pose_bwd=p3.pose_bwd,
        pyramid=p3.pyramid,
        flow_rig=f_rig,
        flow_res=f_res,
        flow_tot=f_tot,
        flow_rig_bwd=f_rig_b,
        flow_res_bwd=f_res_b,
        flow_tot_bwd=f_tot_b,
        mask_rig=m_rig,
        mask_tot=m_tot,
        err_rig=err_rig,
        err_tot=err_tot,
        phase1_pose=p1.pose_fwd,
        phase1_pose_bwd=p1.pose_bwd,
        phase2_pyramid=p2.pyramid,
        histories={1: p1.loss_history, 2: p2.loss_history, 3: p3.loss_history},
    )


_CONFIG_KEYS = {"alpha", "gamma1", "gamma2", "seed", "multiscale", "phase3.rigid_mask"}
_PHASE_KEYS = {"lr", "max_iters", "tol", "w_rig", "w_tot", "w_das", "beta1", "beta2", "lr_end_scale"}


def _parse_bool(value: str, key: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "on", "yes"):
        return True
    if low in ("0", "false", "off", "no"):
        return False
    raise ValidationError(f"cannot parse boolean value {value!r} for {key}")


def parse_config_text(text: str) -> PipelineConfig:
    """Parse the plain-text key=value pipeline configuration.

    Recognized keys: phase{1,2,3}.{lr,max_iters,tol,w_rig,w_tot,w_das,
    beta1,beta2,patience}, alpha, gamma1, gamma2, seed, multiscale, and
    phase3.rigid_mask (tot|rig). Lines starting with '#' are comments.
    """
    cfg = PipelineConfig()
    photometric = cfg.photometric
    mask = cfg.mask
    phases = {1: cfg.phase1, 2: cfg.phase2, 3: cfg.phase3}
    extras = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "alpha":
                photometric = replace(photometric, alpha=float(value))
            elif key == "gamma1":
                mask = replace(mask, gamma1=float(value))
            elif key == "gamma2":
                mask = replace(mask, gamma2=float(value))
            elif key == "seed":
                extras["seed"] = int(value)
            elif key == "multiscale":
                extras["multiscale"] = _parse_bool(value, key)
            elif key == "phase3.rigid_mask":
                if value not in ("tot", "rig"):
                    raise ValidationError("phase3.rigid_mask must be 'tot' or 'rig'")
                extras["phase3_rigid_mask_total"] = value == "tot"
            elif key.startswith("phase") and "." in key:
                head, sub = key.split(".", 1)
                n = int(head[5:])
                if n not in phases or sub not in _PHASE_KEYS:
                    raise ValidationError(f"unknown config key {key!r}")
                p = phases[n]
                if sub == "lr":
                    p = replace(p, lr=float(value))
                elif sub == "max_iters":
                    p = replace(p, max_iters=int(value))
                elif sub == "tol":
                    p = replace(p, tol=float(value))
                elif sub == "beta1":
                    p = replace(p, beta1=float(value))
                elif sub == "beta2":
                    p = replace(p, beta2=float(value))
                elif sub == "lr_end_scale":
                    p = replace(p, lr_end_scale=float(value))
                else:
                    w = {
                        "w_rig": p.weights.w_rig,
                        "w_tot": p.weights.w_tot,
                        "w_das": p.weights.w_das,
                    }
                    w[sub] = float(value)
                    p = replace(p, weights=LossWeights(**w))
                phases[n] = p
            else:
                raise ValidationError(f"unknown config key {key!r}")
        except ValidationError:
            raise
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: {exc}") from exc
    return PipelineConfig(
        photometric=photometric,
        mask=mask,
        phase1=phases[1],
        phase2=phases[2],
        phase3=phases[3],
        **extras,
    )


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
