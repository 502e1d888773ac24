use rayon::prelude::*;

use super::cost::CostVolume;
use super::{SgmError, SgmParams};
use crate::image::ImageF32;

/// Winner-take-all with uniqueness test and parabolic subpixel fit.
///
/// Ties go to the smallest index. A pixel is invalid (NaN) when some `k`
/// more than one step from the winner has
/// `cost(k)·100 < cost(d*)·(100 + uniqueness_ratio)`.
pub fn select_disparity(agg: &CostVolume, params: &SgmParams) -> ImageF32 {
    let (w, h, nd) = (agg.width, agg.height, agg.num_disparities);
    let ratio = 100 + params.uniqueness_ratio as u64;
    let min_d = params.min_disparity as f64;
    let mut out = ImageF32::filled(w, h, f32::NAN);
    out.data_mut().par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let c = agg.pixel(x, y);
            let mut best = 0;
            for d in 1..nd {
                if c[d] < c[best] {
                    best = d;
                }
            }
            let cb = c[best] as u64;
            let ambiguous = c
                .iter()
                .enumerate()
                .any(|(k, &v)| k.abs_diff(best) > 1 && (v as u64) * 100 < cb * ratio);
            if ambiguous {
                continue;
            }
            let mut d = best as f64;
            if best > 0 && best + 1 < nd {
                let (a, b, e) = (c[best - 1] as f64, cb as f64, c[best + 1] as f64);
                let denom = a - 2.0 * b + e;
                if denom > 0.0 {
                    d += (a - e) / (2.0 * denom);
                }
            }
            *px = (d + min_d) as f32;
        }
    });
    out
}

/// Keeps `dispL(x)` iff `|dispL(x) − dispR(x − round(dispL(x)))| ≤ max_diff`.
/// A negative `max_diff` disables the check.
pub fn lr_check(left: &ImageF32, right: &ImageF32, max_diff: i32) -> Result<ImageF32, SgmError> {
    if !left.same_size(right) {
        return Err(SgmError::SizeMismatch {
            left: (left.width(), left.height()),
            right: (right.width(), right.height()),
        });
    }
    if max_diff < 0 {
        return Ok(left.clone());
    }
    let w = left.width();
    let tol = max_diff as f32;
    let mut out = left.clone();
    out.data_mut().par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let dl = *px;
            if !dl.is_finite() {
                continue;
            }
            let xr = x as i64 - dl.round() as i64;
            let keep = xr >= 0 && (xr as usize) < w && (dl - right.get(xr as usize, y)).abs() <= tol;
            if !keep {
                *px = f32::NAN;
            }
        }
    });
    Ok(out)
}

/// Invalidates 4-connected regions (neighbours within `range`) smaller than
/// `window` pixels. `window = 0` leaves the map unchanged.
pub fn speckle_filter(disp: &ImageF32, window: u32, range: f32) -> ImageF32 {
    let mut out = disp.clone();
    if window == 0 {
        return out;
    }
    let (w, h) = (disp.width(), disp.height());
    let data = disp.data();
    let mut label = vec![u32::MAX; w * h];
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if label[start] != u32::MAX || !data[start].is_finite() {
            continue;
        }
        label[start] = start as u32;
        stack.push(start);
        members.clear();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (x, y) = (i % w, i / w);
            let v = data[i];
            let mut visit = |j: usize| {
                if label[j] == u32::MAX && data[j].is_finite() && (data[j] - v).abs() <= range {
                    label[j] = start as u32;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if members.len() < window as usize {
            for &i in &members {
                out.data_mut()[i] = f32::NAN;
            }
        }
    }
    out
}
