"""Hierarchical kinematic body-model fitting.

A chain-structured forward-backward solver over a 24-joint parametric
body (pose, shape, weak-perspective camera), plus the synthetic
occlusion-robustness evaluation harness and file/CLI plumbing.
"""

from .bodymodel import (
    NUM_JOINTS,
    NUM_SHAPE,
    ModelFormatError,
    PosedMesh,
    TemplateModel,
    load_model,
    mesh_function,
    regress_rest_joints,
    save_model,
    save_obj,
    shape_deform,
    skin,
    synth_model,
)
from .camera import (
    DegenerateConfigurationError,
    WeakPerspectiveCamera,
    estimate_camera,
    project,
)
from .chains import Chain, ChainId, ChainSet, UnsupportedSkeletonError, default_chain_set
from .evaluate import (
    EvalReport,
    Occluder,
    OcclusionPattern,
    SweepCase,
    apply_occlusion,
    doc_size,
    mpjpe,
    occluder_mask,
    pck,
    run_occlusion_sweep,
    synth_sweep_cases,
)
from .files import (
    CaseFile,
    FileFormatError,
    StateFile,
    load_case,
    load_config,
    load_state,
    save_case,
    save_state,
    solver_config_from,
)
from .kinematics import (
    JointTransforms,
    KinematicTree,
    forward_kinematics,
    joint_jacobian,
)
from .objectives import (
    LossBreakdown,
    LossWeights,
    PosePrior,
    default_pose_prior,
    fit_prior,
    load_prior,
    predict_joints,
    prior_gradient,
    prior_penalty,
    sample_plausible_poses,
    save_prior,
    total_loss,
)
from .observations import Observations
from .report import render_report_figures, write_report_csv, write_report_json
from .solver import (
    NumericalFailure,
    SolverConfig,
    SolverMode,
    SolverState,
    TraceRecord,
    inner_solve_chain,
    mean_initialization,
    outer_solve,
    shape_from_bone_lengths,
    update_shape,
)

__version__ = "0.1.0"

__all__ = [
    "NUM_JOINTS",
    "NUM_SHAPE",
    "ModelFormatError",
    "PosedMesh",
    "TemplateModel",
    "load_model",
    "mesh_function",
    "regress_rest_joints",
    "save_model",
    "save_obj",
    "shape_deform",
    "skin",
    "synth_model",
    "DegenerateConfigurationError",
    "WeakPerspectiveCamera",
    "estimate_camera",
    "project",
    "Chain",
    "ChainId",
    "ChainSet",
    "UnsupportedSkeletonError",
    "default_chain_set",
    "EvalReport",
    "Occluder",
    "OcclusionPattern",
    "SweepCase",
    "apply_occlusion",
    "doc_size",
    "mpjpe",
    "occluder_mask",
    "pck",
    "run_occlusion_sweep",
    "synth_sweep_cases",
    "CaseFile",
    "FileFormatError",
    "StateFile",
    "load_case",
    "load_config",
    "load_state",
    "save_case",
    "save_state",
    "solver_config_from",
    "JointTransforms",
    "KinematicTree",
    "forward_kinematics",
    "joint_jacobian",
    "LossBreakdown",
    "LossWeights",
    "PosePrior",
    "default_pose_prior",
    "fit_prior",
    "load_prior",
    "predict_joints",
    "prior_gradient",
    "prior_penalty",
    "sample_plausible_poses",
    "save_prior",
    "total_loss",
    "Observations",
    "render_report_figures",
    "write_report_csv",
    "write_report_json",
    "NumericalFailure",
    "SolverConfig",
    "SolverMode",
    "SolverState",
    "TraceRecord",
    "inner_solve_chain",
    "mean_initialization",
    "outer_solve",
    "shape_from_bone_lengths",
    "update_shape",
    "__version__",
]
