//! Low-cost stereo vision pipeline: chessboard calibration, Bouguet
//! rectification, census-based semi-global matching and ROI distance
//! estimation.

pub mod calib;
pub mod depth;
pub mod image;
pub mod sgm;
pub mod synth;
pub mod target;

pub use calib::{CalibError, CameraIntrinsics, CameraModel, DistortionCoeffs, ImageSize, StereoRig, ViewPose};
pub use depth::{DepthError, Roi, RoiStatistic};
pub use image::{ImageError, ImageF32, ImageU8};
pub use sgm::{DisparityMap, ParamError, SgmError, SgmParams, SgmParamsPatch};
pub use target::{BoardSpec, CornerGrid, TargetError};
