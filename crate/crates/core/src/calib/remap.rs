use nalgebra::Vector3;
use rayon::prelude::*;

use super::{CalibError, StereoRig};
use crate::image::{ImageF32, ImageU8};

/// For every rectified pixel, the source position in the raw image
/// (NaN where the rectified ray has no valid source).
#[derive(Debug, Clone)]
pub struct RectifyMap {
    pub width: usize,
    pub height: usize,
    pub map_x: Vec<f32>,
    pub map_y: Vec<f32>,
}

impl RectifyMap {
    pub fn source(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.map_x[i], self.map_y[i])
    }
}

pub fn build_rectify_map(rig: &StereoRig, right: bool) -> RectifyMap {
    let (cam, rot) = if right {
        (&rig.right, rig.rect_right)
    } else {
        (&rig.left, rig.rect_left)
    };
    let inv = rot.transpose();
    let (w, h) = (rig.image_size.width, rig.image_size.height);
    let (f, cx, cy) = (rig.p_left[(0, 0)], rig.p_left[(0, 2)], rig.p_left[(1, 2)]);
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut xs = Vec::with_capacity(w);
            let mut ys = Vec::with_capacity(w);
            for u in 0..w {
                let ray = inv * Vector3::new((u as f64 - cx) / f, (v as f64 - cy) / f, 1.0);
                match cam.project(&ray) {
                    Ok(p) if p.x.is_finite() && p.y.is_finite() => {
                        xs.push(p.x as f32);
                        ys.push(p.y as f32);
                    }
                    _ => {
                        xs.push(f32::NAN);
                        ys.push(f32::NAN);
                    }
                }
            }
            (xs, ys)
        })
        .collect();
    let mut map_x = Vec::with_capacity(w * h);
    let mut map_y = Vec::with_capacity(w * h);
    for (xs, ys) in rows {
        map_x.extend(xs);
        map_y.extend(ys);
    }
    RectifyMap {
        width: w,
        height: h,
        map_x,
        map_y,
    }
}

fn inside(x: f32, y: f32, w: usize, h: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32
}

/// Bilinear resampling; pixels whose source falls outside read as 0.
pub fn remap_u8(src: &ImageU8, map: &RectifyMap) -> ImageU8 {
    let c = src.channels() as usize;
    let mut data = vec![0u8; map.width * map.height * c];
    data.par_chunks_mut(map.width * c).enumerate().for_each(|(y, row)| {
        for x in 0..map.width {
            let (sx, sy) = map.source(x, y);
            if !inside(sx, sy, src.width(), src.height()) {
                continue;
            }
            for ch in 0..c {
                let v = src.sample_bilinear(sx as f64, sy as f64, ch).unwrap_or(0.0);
                row[x * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    ImageU8::new(map.width, map.height, c as u8, data).expect("sizes agree")
}

/// Bilinear resampling; pixels whose source falls outside read as NaN.
pub fn remap_f32(src: &ImageF32, map: &RectifyMap) -> ImageF32 {
    let mut out = ImageF32::filled(map.width, map.height, f32::NAN);
    out.data_mut().par_chunks_mut(map.width).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let (sx, sy) = map.source(x, y);
            if inside(sx, sy, src.width(), src.height()) {
                *px = src.sample_bilinear(sx as f64, sy as f64).map_or(f32::NAN, |v| v as f32);
            }
        }
    });
    out
}

/// Rectify a raw image pair with a rig.
pub fn rectify_pair(rig: &StereoRig, left: &ImageU8, right: &ImageU8) -> Result<(ImageU8, ImageU8), CalibError> {
    let (w, h) = (rig.image_size.width, rig.image_size.height);
    for img in [left, right] {
        if img.width() != w || img.height() != h {
            return Err(CalibError::InvalidArgument(format!(
                "image is {}x{} but the rig expects {w}x{h}",
                img.width(),
                img.height()
            )));
        }
    }
    Ok((
        remap_u8(left, &build_rectify_map(rig, false)),
        remap_u8(right, &build_rectify_map(rig, true)),
    ))
}
