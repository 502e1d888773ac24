use super::{to_byte, ImageError, ImageF32, ImageU8};
use serde::{Deserialize, Serialize};

/// ITU-R BT.601 luma, rounded half away from zero.
pub fn to_grayscale(img: &ImageU8) -> Result<ImageU8, ImageError> {
    if img.channels() != 3 {
        return Err(ImageError::Channels {
            expected: 3,
            actual: img.channels(),
        });
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| to_byte(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    ImageU8::new(img.width(), img.height(), 1, data)
}

/// Disparity values mapped to the two ends of the color ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudocolorRange {
    pub lo: f32,
    pub hi: f32,
}

impl PseudocolorRange {
    pub fn new(lo: f32, hi: f32) -> Result<Self, ImageError> {
        if hi > lo {
            Ok(Self { lo, hi })
        } else {
            Err(ImageError::InvalidRange { lo, hi })
        }
    }

    /// RGB for a single value; NaN is black.
    pub fn color(&self, v: f32) -> [u8; 3] {
        if v.is_nan() {
            return [0, 0, 0];
        }
        let t = ((v as f64 - self.lo as f64) / (self.hi as f64 - self.lo as f64)).clamp(0.0, 1.0);
        let ch = |offset: f64| to_byte((1.5 - (4.0 * t - offset).abs()).clamp(0.0, 1.0) * 255.0);
        [ch(3.0), ch(2.0), ch(1.0)]
    }
}

/// Jet-style false color for a disparity (or depth) map.
pub fn pseudocolor(map: &ImageF32, lo: f32, hi: f32) -> Result<ImageU8, ImageError> {
    let range = PseudocolorRange::new(lo, hi)?;
    let mut data = Vec::with_capacity(map.data().len() * 3);
    for &v in map.data() {
        data.extend_from_slice(&range.color(v));
    }
    ImageU8::new(map.width(), map.height(), 3, data)
}
