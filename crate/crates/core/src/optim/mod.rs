//! Sparse Levenberg–Marquardt and the bundle-adjustment residuals.

pub mod ba;
pub mod lm;
pub mod problem;
pub mod residuals;

pub use ba::{apply_params, build_ba_problem, bundle_adjust, BaConfig, BaMapping, PanoMode};
pub use lm::{evaluate_cost, solve_lm, LmOptions, SolveReport, Termination};
pub use problem::{
    IntrinsicsParam, Params, PointParam, PoseParam, Problem, ResidualBlock, ResidualKind, RobustLoss, ViewLink,
};
pub use residuals::{
    pano_linearize, pano_residuals, reprojection_linearize, reprojection_residual, slot_relative_rotation,
    PanoLinearization, PanoResiduals, ReprojectionLinearization,
};
