//! Census-based semi-global matching.

mod aggregate;
mod census;
mod cost;
mod params;
mod select;

pub use aggregate::{aggregate_directions, aggregate_paths, directions_for, path_costs, DIRECTIONS};
pub use census::{census_transform, census_transform_radius, CensusImage, CENSUS_BITS, CENSUS_RADIUS};
pub use cost::{matching_cost, CostVolume};
pub use params::{ParamError, SgmParams, SgmParamsPatch, SGM_VERSION};
pub use select::{lr_check, select_disparity, speckle_filter};

use thiserror::Error;

use crate::image::{ImageError, ImageF32, ImageU8};

/// Disparity in pixels relative to the rectified left image; NaN = invalid.
pub type DisparityMap = ImageF32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SgmError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("image sizes differ: left {left:?}, right {right:?}")]
    SizeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Disparity of the left view before the left-right check.
fn raw_disparity(left: &ImageU8, right: &ImageU8, params: &SgmParams) -> Result<DisparityMap, SgmError> {
    let cl = census_transform(left)?;
    let cr = census_transform(right)?;
    let cost = matching_cost(&cl, &cr, params)?;
    let agg = aggregate_paths(&cost, params.p1, params.p2, params.num_paths);
    Ok(select_disparity(&agg, params))
}

/// Full matcher: census, block cost, path aggregation, winner selection,
/// left-right check and speckle filtering.
///
/// The right-view disparity for the left-right check comes from the same
/// pipeline run on the mirrored, swapped pair; mirroring turns right-view
/// matches into positive disparities, so its output is only mirrored back.
pub fn compute_disparity(left: &ImageU8, right: &ImageU8, params: &SgmParams) -> Result<DisparityMap, SgmError> {
    params.validate()?;
    left.require_gray()?;
    right.require_gray()?;
    if (left.width(), left.height()) != (right.width(), right.height()) {
        return Err(SgmError::SizeMismatch {
            left: (left.width(), left.height()),
            right: (right.width(), right.height()),
        });
    }
    let disp_left = raw_disparity(left, right, params)?;
    let checked = if params.disp12_max_diff >= 0 {
        let disp_right = raw_disparity(&right.mirrored(), &left.mirrored(), params)?.mirrored();
        lr_check(&disp_left, &disp_right, params.disp12_max_diff)?
    } else {
        disp_left
    };
    Ok(speckle_filter(&checked, params.speckle_window_size, params.speckle_range))
}

/// Right-view disparity as used by the left-right check.
pub fn compute_right_disparity(left: &ImageU8, right: &ImageU8, params: &SgmParams) -> Result<DisparityMap, SgmError> {
    params.validate()?;
    Ok(raw_disparity(&right.mirrored(), &left.mirrored(), params)?.mirrored())
}

/// Fraction of finite pixels and, among them, the fraction within `tol`
/// of `truth`.
pub fn disparity_accuracy(disp: &DisparityMap, truth: f32, tol: f32) -> (f64, f64) {
    let finite: Vec<f32> = disp.data().iter().copied().filter(|v| v.is_finite()).collect();
    let total = disp.data().len().max(1) as f64;
    let close = finite.iter().filter(|v| (*v - truth).abs() <= tol).count();
    (finite.len() as f64 / total, close as f64 / finite.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_dot_stereogram;

    #[test]
    fn stereogram_recovers_shift() {
        let (l, r) = random_dot_stereogram(128, 96, 12, 21);
        let d = compute_disparity(&l, &r, &SgmParams::default()).unwrap();
        let (valid, close) = disparity_accuracy(&d, 12.0, 1.0);
        assert!(close >= 0.95, "close {close}");
        assert!(valid >= 0.7, "valid {valid}");
        let p = SgmParams::default();
        assert!(d.data().iter().filter(|v| v.is_finite()).all(|v| *v >= 0.0 && *v < p.max_disparity() as f32));
    }

    #[test]
    fn right_view_matches_left() {
        let (l, r) = random_dot_stereogram(96, 48, 7, 4);
        let p = SgmParams {
            num_disparities: 16,
            ..Default::default()
        };
        let dr = compute_right_disparity(&l, &r, &p).unwrap();
        // right pixels near the right border have no partner in the left view
        let inner = ImageF32::from_fn(80, 48, |x, y| dr.get(x, y));
        let (_, close) = disparity_accuracy(&inner, 7.0, 1.0);
        assert!(close > 0.95, "{close}");
    }

    #[test]
    fn deterministic() {
        let (l, r) = random_dot_stereogram(80, 40, 5, 9);
        let p = SgmParams {
            num_disparities: 16,
            ..Default::default()
        };
        let a = compute_disparity(&l, &r, &p).unwrap();
        let b = compute_disparity(&l, &r, &p).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = ImageU8::filled(20, 10, 1, 0);
        let bad = SgmParams {
            num_disparities: 50,
            ..Default::default()
        };
        let e = compute_disparity(&img, &img, &bad).unwrap_err();
        assert!(e.to_string().contains("must be divisible by 16"));
        let bad = SgmParams {
            block_size: 4,
            ..Default::default()
        };
        assert!(compute_disparity(&img, &img, &bad).unwrap_err().to_string().contains("must be an odd number"));
        let other = ImageU8::filled(21, 10, 1, 0);
        assert!(matches!(
            compute_disparity(&img, &other, &SgmParams::default()),
            Err(SgmError::SizeMismatch { .. })
        ));
        let rgb = ImageU8::filled(20, 10, 3, 0);
        assert!(compute_disparity(&rgb, &rgb, &SgmParams::default()).is_err());
    }
}
