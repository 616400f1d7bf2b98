"""Scene-flow decomposition: rigid/residual flow, direct visual odometry,
and instance-level 3-D motion regression on stereo frame pairs."""

from .errors import DivergenceError, ValidationError
from .geometry import (
    DepthMap,
    DisparityMap,
    Intrinsics,
    Pose6DoF,
    RigidTransform,
    StereoRig,
    backproject,
    disparity_to_depth,
    invert_transform,
    pose_to_transform,
    project,
    rigid_flow,
)
from .loss import (
    ErrorMap,
    LossWeights,
    MaskConfig,
    PhotometricConfig,
    combined_loss,
    depth_aware_smoothness,
    masked_warp_loss,
    photometric_error,
    ssim_map,
    validity_mask,
)
from .metrics import FlowEval, OdomEval, Trajectory, ate, epe, f1, pose_error
from .motion import (
    InstanceMask,
    InstanceMotion,
    MotionVectorSet,
    RansacConfig,
    instance_motion_vectors,
    ransac_representative,
    to_velocity,
)
from .optim import (
    DecompositionResult,
    PhaseConfig,
    PipelineConfig,
    PoseParams,
    ResidualFlowPyramid,
    SceneInputs,
    adaptive_step,
    compose_residual,
    decompose,
    loss_gradients,
    run_phase1,
    run_phase2,
    run_phase3,
)
from .synth import (
    GroundTruthBundle,
    SceneSpec,
    add_image_noise,
    homogeneous_variant,
    render_scene,
    standard_suite,
    write_bundle,
)
from .warp import FlowField, Image, SampleResult, bilinear_sample, lookup_flow, warp_image

__version__ = "0.1.0"
