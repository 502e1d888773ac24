//! Disparity to metric depth, ROI distance and point-cloud export.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::StereoRig;
use crate::image::ImageF32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("roi is empty")]
    EmptyRoi,
    #[error("roi {roi} does not fit in a {width}x{height} image")]
    RoiOutside { roi: Roi, width: usize, height: usize },
    #[error("roi contains no valid pixels")]
    NoValidPixels,
    #[error("no distance: disparity {0} maps behind the camera or to infinity")]
    NoDistance(f64),
    #[error("bad roi '{0}': expected x,y,w,h")]
    Parse(String),
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn check(&self, width: usize, height: usize) -> Result<(), DepthError> {
        if self.w == 0 || self.h == 0 {
            return Err(DepthError::EmptyRoi);
        }
        if self.x + self.w > width || self.y + self.h > height {
            return Err(DepthError::RoiOutside {
                roi: *self,
                width,
                height,
            });
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + (self.w as f64 - 1.0) * 0.5, self.y as f64 + (self.h as f64 - 1.0) * 0.5)
    }

    fn values(&self, disp: &ImageF32) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.w * self.h);
        for y in self.y..self.y + self.h {
            for x in self.x..self.x + self.w {
                out.push(disp.get(x, y));
            }
        }
        out
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Roi {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse()).collect();
        match parts.as_deref() {
            Ok([x, y, w, h]) => Ok(Roi::new(*x, *y, *w, *h)),
            _ => Err(DepthError::Parse(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiStatistic {
    #[default]
    Mean,
    Median,
}

/// Summary of the finite disparities inside a ROI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiDisparity {
    /// NaN when no pixel is valid.
    pub value: f64,
    pub valid: usize,
    pub total: usize,
}

impl RoiDisparity {
    pub fn has_valid_pixels(&self) -> bool {
        self.valid > 0
    }
}

pub fn roi_average_disparity(disp: &ImageF32, roi: &Roi) -> Result<RoiDisparity, DepthError> {
    roi_disparity(disp, roi, RoiStatistic::Mean)
}

/// Mean (or median) of the finite pixels in `roi`.
pub fn roi_disparity(disp: &ImageF32, roi: &Roi, stat: RoiStatistic) -> Result<RoiDisparity, DepthError> {
    roi.check(disp.width(), disp.height())?;
    let all = roi.values(disp);
    let mut vals: Vec<f64> = all.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
    let value = if vals.is_empty() {
        f64::NAN
    } else {
        match stat {
            RoiStatistic::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            RoiStatistic::Median => {
                vals.sort_by(f64::total_cmp);
                let n = vals.len();
                if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                }
            }
        }
    };
    Ok(RoiDisparity {
        value,
        valid: vals.len(),
        total: all.len(),
    })
}

/// 3-D point in the rectified left camera frame for pixel `(x, y)` at
/// disparity `d`, or `None` when the homogeneous scale is not positive.
pub fn reproject_pixel(rig: &StereoRig, x: f64, y: f64, d: f64) -> Option<Vector3<f64>> {
    if !d.is_finite() {
        return None;
    }
    let v = rig.q * Vector4::new(x, y, d, 1.0);
    if !(v.w > 0.0) {
        return None;
    }
    let p = Vector3::new(v.x, v.y, v.z) / v.w;
    (p.z > 0.0 && p.iter().all(|c| c.is_finite())).then_some(p)
}

/// Per-pixel depth `Z` in meters; NaN where the disparity is invalid or
/// maps to a non-positive scale.
pub fn disparity_to_depth(disp: &ImageF32, rig: &StereoRig) -> ImageF32 {
    let w = disp.width();
    let mut out = ImageF32::filled(w, disp.height(), f32::NAN);
    out.data_mut().par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, z) in row.iter_mut().enumerate() {
            if let Some(p) = reproject_pixel(rig, x as f64, y as f64, disp.get(x, y) as f64) {
                *z = p.z as f32;
            }
        }
    });
    out
}

/// Distance in meters: the ROI's mean disparity reprojected at the ROI
/// centre.
pub fn roi_distance(disp: &ImageF32, roi: &Roi, rig: &StereoRig) -> Result<f64, DepthError> {
    roi_distance_with(disp, roi, rig, RoiStatistic::Mean)
}

pub fn roi_distance_with(disp: &ImageF32, roi: &Roi, rig: &StereoRig, stat: RoiStatistic) -> Result<f64, DepthError> {
    let r = roi_disparity(disp, roi, stat)?;
    if !r.has_valid_pixels() {
        return Err(DepthError::NoValidPixels);
    }
    let (cx, cy) = roi.center();
    reproject_pixel(rig, cx, cy, r.value)
        .map(|p| p.z)
        .ok_or(DepthError::NoDistance(r.value))
}

/// Depth change per pixel of disparity at distance `z`: `z² / (f·B)`.
pub fn depth_resolution(z: f64, rig: &StereoRig) -> f64 {
    z * z / (rig.focal_px() * rig.baseline_m)
}

/// One point per valid pixel, row-major.
pub fn reproject_to_cloud(disp: &ImageF32, rig: &StereoRig) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for y in 0..disp.height() {
        for x in 0..disp.width() {
            if let Some(p) = reproject_pixel(rig, x as f64, y as f64, disp.get(x, y) as f64) {
                out.push(p);
            }
        }
    }
    out
}

/// `# points N` header, then one `X Y Z` line per point.
pub fn cloud_to_text(points: &[Vector3<f64>]) -> String {
    let mut s = format!("# points {}\n", points.len());
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s
}
