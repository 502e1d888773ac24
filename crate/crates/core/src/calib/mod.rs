//! Camera models, monocular and stereo calibration, rectification.

mod camera;
mod homography;
mod lm;
mod mono;
mod remap;
mod stereo;
mod zhang;

pub use camera::{
    is_rotation, project_camera_point, project_point, rodrigues, rodrigues_inv, skew_matrix,
    undistort_normalized, CameraIntrinsics, DistortionCoeffs, ViewPose, NUM_INTRINSIC_PARAMS,
};
pub use homography::{apply_homography, estimate_homography};
pub use lm::{LmOptions, LmReport};
pub use mono::{
    calibrate_camera, calibrate_camera_with, estimate_board_pose, heuristic_intrinsics, optimal_new_intrinsics,
    MonoCalibration, PixelRect,
};
pub use remap::{build_rectify_map, remap_f32, remap_u8, rectify_pair, RectifyMap};
pub use stereo::{
    stereo_calibrate, stereo_rectify, vertical_misalignment, CameraFile, CameraFileEntry, CameraModel,
    StereoCalibration, StereoFlag, StereoRig, CAMERA_VERSION, MAX_RELATIVE_SPREAD_DEG, RIG_VERSION,
};
pub use zhang::{nearest_rotation, pose_from_homography, zhang_init};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("matrix is not a proper rotation")]
    NotARotation,
    #[error("undistortion did not converge for ({x}, {y})")]
    NonConvergence { x: f64, y: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("need at least {needed} views, got {got}")]
    NotEnoughViews { needed: usize, got: usize },
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("closed-form initialisation failed: {0}")]
    InitFailure(String),
    #[error("optimisation diverged: {0}")]
    Divergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("baseline is zero")]
    ZeroBaseline,
    #[error("calibration file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

impl ImageSize {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}
