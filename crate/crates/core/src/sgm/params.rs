use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A violated parameter rule. Messages quote the rule so callers can show
/// them verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("num_disparities = {0}: must be positive and must be divisible by 16")]
    NumDisparities(i64),
    #[error("block_size = {0}: must be an odd number ≥ 1")]
    BlockSize(i64),
    #[error("p1 = {p1}, p2 = {p2}: penalties must satisfy p2 > p1 > 0")]
    Penalties { p1: i64, p2: i64 },
    #[error("num_paths = {0}: must be 4 or 8")]
    NumPaths(i64),
    #[error("speckle_range = {0}: must be a finite number ≥ 0")]
    SpeckleRange(f64),
    #[error("min_disparity = {0}: disparity range does not fit in 32 bits")]
    MinDisparity(i64),
    #[error("parameter file: {0}")]
    Format(String),
}

pub const SGM_VERSION: &str = "sgm-v1";

/// Semi-global matcher settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgmParams {
    pub min_disparity: i32,
    pub num_disparities: u32,
    pub block_size: u32,
    pub p1: u32,
    pub p2: u32,
    /// Negative disables the left-right check.
    pub disp12_max_diff: i32,
    pub uniqueness_ratio: u32,
    /// 0 disables speckle filtering.
    pub speckle_window_size: u32,
    pub speckle_range: f32,
    pub num_paths: u32,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self::with_block_size(5)
    }
}

impl SgmParams {
    /// Defaults with penalties `p1 = 8·bs²`, `p2 = 32·bs²`.
    pub fn with_block_size(block_size: u32) -> Self {
        let area = block_size.saturating_mul(block_size);
        Self {
            min_disparity: 0,
            num_disparities: 64,
            block_size,
            p1: area.saturating_mul(8),
            p2: area.saturating_mul(32),
            disp12_max_diff: 1,
            uniqueness_ratio: 10,
            speckle_window_size: 100,
            speckle_range: 2.0,
            num_paths: 8,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.num_disparities == 0 || !self.num_disparities.is_multiple_of(16) {
            return Err(ParamError::NumDisparities(self.num_disparities as i64));
        }
        if self.block_size.is_multiple_of(2) {
            return Err(ParamError::BlockSize(self.block_size as i64));
        }
        if !(self.p2 > self.p1 && self.p1 > 0) {
            return Err(ParamError::Penalties {
                p1: self.p1 as i64,
                p2: self.p2 as i64,
            });
        }
        if self.num_paths != 4 && self.num_paths != 8 {
            return Err(ParamError::NumPaths(self.num_paths as i64));
        }
        if !(self.speckle_range >= 0.0) || !self.speckle_range.is_finite() {
            return Err(ParamError::SpeckleRange(self.speckle_range as f64));
        }
        if (self.min_disparity as i64 + self.num_disparities as i64) > i32::MAX as i64 {
            return Err(ParamError::MinDisparity(self.min_disparity as i64));
        }
        Ok(())
    }

    /// Largest disparity the search can return (exclusive).
    pub fn max_disparity(&self) -> i32 {
        self.min_disparity + self.num_disparities as i32
    }

    pub fn apply(&self, patch: &SgmParamsPatch) -> Result<SgmParams, ParamError> {
        let mut p = *self;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = patch.$f { p.$f = v; } )* };
        }
        set!(
            min_disparity,
            num_disparities,
            block_size,
            p1,
            p2,
            disp12_max_diff,
            uniqueness_ratio,
            speckle_window_size,
            speckle_range,
            num_paths
        );
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SgmParamsFile::new(self)).expect("params serialize")
    }

    /// Parses and validates the versioned JSON form.
    pub fn from_json(text: &str) -> Result<SgmParams, ParamError> {
        let f: SgmParamsFile = serde_json::from_str(text).map_err(|e| ParamError::Format(e.to_string()))?;
        if f.version != SGM_VERSION {
            return Err(ParamError::Format(format!(
                "unsupported version '{}', expected '{SGM_VERSION}'",
                f.version
            )));
        }
        let p = f.params();
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SgmParamsFile {
    version: String,
    min_disparity: i32,
    num_disparities: u32,
    block_size: u32,
    p1: u32,
    p2: u32,
    disp12_max_diff: i32,
    uniqueness_ratio: u32,
    speckle_window_size: u32,
    speckle_range: f32,
    num_paths: u32,
}

impl SgmParamsFile {
    fn new(p: &SgmParams) -> Self {
        Self {
            version: SGM_VERSION.into(),
            min_disparity: p.min_disparity,
            num_disparities: p.num_disparities,
            block_size: p.block_size,
            p1: p.p1,
            p2: p.p2,
            disp12_max_diff: p.disp12_max_diff,
            uniqueness_ratio: p.uniqueness_ratio,
            speckle_window_size: p.speckle_window_size,
            speckle_range: p.speckle_range,
            num_paths: p.num_paths,
        }
    }

    fn params(&self) -> SgmParams {
        SgmParams {
            min_disparity: self.min_disparity,
            num_disparities: self.num_disparities,
            block_size: self.block_size,
            p1: self.p1,
            p2: self.p2,
            disp12_max_diff: self.disp12_max_diff,
            uniqueness_ratio: self.uniqueness_ratio,
            speckle_window_size: self.speckle_window_size,
            speckle_range: self.speckle_range,
            num_paths: self.num_paths,
        }
    }
}

/// A partial update: only present fields change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgmParamsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_disparity: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_disparities: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disp12_max_diff: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniqueness_ratio: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speckle_window_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speckle_range: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_paths: Option<u32>,
}

impl SgmParamsPatch {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}
