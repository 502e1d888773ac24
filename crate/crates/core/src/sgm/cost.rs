use rayon::prelude::*;

use super::census::{CensusImage, CENSUS_BITS};
use super::{SgmError, SgmParams};

/// Matching costs, `height × width × num_disparities`, disparity innermost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub num_disparities: usize,
    pub costs: Vec<u16>,
}

impl CostVolume {
    pub fn zeros(width: usize, height: usize, num_disparities: usize) -> Self {
        Self {
            width,
            height,
            num_disparities,
            costs: vec![0; width * height * num_disparities],
        }
    }

    pub fn from_fn(width: usize, height: usize, num_disparities: usize, mut f: impl FnMut(usize, usize, usize) -> u16) -> Self {
        let mut costs = Vec::with_capacity(width * height * num_disparities);
        for y in 0..height {
            for x in 0..width {
                for d in 0..num_disparities {
                    costs.push(f(x, y, d));
                }
            }
        }
        Self {
            width,
            height,
            num_disparities,
            costs,
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.num_disparities
    }

    pub fn get(&self, x: usize, y: usize, d: usize) -> u16 {
        self.costs[self.index(x, y) + d]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u16] {
        let i = self.index(x, y);
        &self.costs[i..i + self.num_disparities]
    }
}

/// Block-summed Hamming costs between left and right census codes.
///
/// The per-pixel cost pairs left `x` with right `x − (min_disparity + d)`;
/// pairs that fall outside the right image cost the maximum Hamming distance.
/// Per-pixel costs are then summed over a `block_size²` window with clamped
/// borders.
pub fn matching_cost(left: &CensusImage, right: &CensusImage, params: &SgmParams) -> Result<CostVolume, SgmError> {
    if (left.width, left.height) != (right.width, right.height) {
        return Err(SgmError::SizeMismatch {
            left: (left.width, left.height),
            right: (right.width, right.height),
        });
    }
    params.validate()?;
    let (w, h) = (left.width, left.height);
    let nd = params.num_disparities as usize;
    let min_d = params.min_disparity as i64;

    let mut raw = vec![0u8; w * h * nd];
    raw.par_chunks_mut((w * nd).max(1)).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let l = left.codes[y * w + x];
            let out = &mut row[x * nd..(x + 1) * nd];
            for (d, o) in out.iter_mut().enumerate() {
                let xr = x as i64 - (min_d + d as i64);
                *o = if xr >= 0 && xr < w as i64 {
                    (l ^ right.codes[y * w + xr as usize]).count_ones() as u8
                } else {
                    CENSUS_BITS as u8
                };
            }
        }
    });
    Ok(CostVolume {
        width: w,
        height: h,
        num_disparities: nd,
        costs: box_sum(&raw, w, h, nd, params.block_size as usize),
    })
}

/// Sum over a `block × block` window with clamped coordinates, saturating
/// at `u16::MAX`.
fn box_sum(raw: &[u8], w: usize, h: usize, nd: usize, block: usize) -> Vec<u16> {
    let r = (block / 2) as i64;
    if r == 0 {
        return raw.iter().map(|&v| v as u16).collect();
    }
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut horiz = vec![0u32; w * h * nd];
    horiz.par_chunks_mut(w * nd).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let out = &mut row[x * nd..(x + 1) * nd];
            for dx in -r..=r {
                let xx = clamp(x as i64 + dx, w);
                let src = &raw[(y * w + xx) * nd..(y * w + xx + 1) * nd];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += s as u32;
                }
            }
        }
    });
    let mut out = vec![0u16; w * h * nd];
    out.par_chunks_mut(w * nd).enumerate().for_each(|(y, row)| {
        let mut acc = vec![0u32; w * nd];
        for dy in -r..=r {
            let yy = clamp(y as i64 + dy, h);
            for (a, &s) in acc.iter_mut().zip(&horiz[yy * w * nd..(yy + 1) * w * nd]) {
                *a += s;
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = a.min(u16::MAX as u32) as u16;
        }
    });
    out
}
