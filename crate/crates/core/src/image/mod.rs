//! Raster types shared by every stage of the pipeline, plus file I/O and
//! a handful of pixel-level helpers.

mod color;
mod pfm;
mod pnm;

pub use color::{pseudocolor, to_grayscale, PseudocolorRange};
pub use pfm::{load_pfm, save_pfm};
pub use pnm::{load_pnm, save_pnm};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("bad magic number: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (must be 1..=255)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("expected {expected} channel(s), got {actual}")]
    Channels { expected: u8, actual: u8 },
    #[error("sample at ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid pseudocolor range: hi ({hi}) must exceed lo ({lo})")]
    InvalidRange { lo: f32, hi: f32 },
}

/// 8-bit raster, one or three interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels {
                expected: 1,
                actual: channels,
            });
        }
        if width == 0 || height == 0 {
            return Err(ImageError::SizeMismatch(format!(
                "dimensions must be non-zero, got {width}x{height}"
            )));
        }
        let expected = width * height * channels as usize;
        if data.len() != expected {
            return Err(ImageError::SizeMismatch(format!(
                "{width}x{height}x{channels} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: u8, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels as usize])
            .expect("filled image with valid dimensions")
    }

    /// Builds a single-channel image from a per-pixel function.
    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data).expect("from_fn_gray with valid dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels as usize + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let ch = self.channels as usize;
        self.data[(y * self.width + x) * ch + c] = v;
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    pub fn require_gray(&self) -> Result<(), ImageError> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(ImageError::Channels {
                expected: 1,
                actual: self.channels,
            })
        }
    }

    /// Grayscale view of the image: clones gray input, converts RGB.
    pub fn to_gray(&self) -> ImageU8 {
        if self.channels == 1 {
            self.clone()
        } else {
            to_grayscale(self).expect("three-channel input")
        }
    }

    /// Horizontal mirror.
    pub fn mirrored(&self) -> ImageU8 {
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * ch) {
            for px in row.chunks_exact(ch).rev() {
                data.extend_from_slice(px);
            }
        }
        ImageU8 { data, ..*self }
    }

    /// Converts a gray image to 32-bit floats.
    pub fn to_f32(&self) -> Result<ImageF32, ImageError> {
        self.require_gray()?;
        Ok(ImageF32 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
        })
    }

    /// Bilinear sample of channel `c`. Exact at integer coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> Result<f64, ImageError> {
        let (x0, y0, x1, y1, fx, fy) = lattice_cell(x, y, self.width, self.height)?;
        let p = |xx, yy| self.get(xx, yy, c) as f64;
        Ok(blend(p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1), fx, fy))
    }
}

/// Single-channel 32-bit float raster. NaN marks invalid pixels where a
/// stage documents it (disparity and depth maps).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::SizeMismatch(format!(
                "dimensions must be non-zero, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch(format!(
                "{width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("filled image with valid dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn with valid dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &ImageF32) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mirrored(&self) -> ImageF32 {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        ImageF32 { data, ..*self }
    }

    /// Bilinear sample. Neighbours carrying zero weight never contribute,
    /// so sampling exactly on a finite pixel next to a NaN stays finite.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64, ImageError> {
        let (x0, y0, x1, y1, fx, fy) = lattice_cell(x, y, self.width, self.height)?;
        let p = |xx, yy| self.get(xx, yy) as f64;
        Ok(blend(p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1), fx, fy))
    }
}

fn lattice_cell(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
) -> Result<(usize, usize, usize, usize, f64, f64), ImageError> {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
        return Err(ImageError::OutOfBounds {
            x,
            y,
            width,
            height,
        });
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Ok((x0, y0, x1, y1, x - x0 as f64, y - y0 as f64))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a * (1.0 - t) + b * t
    }
}

#[inline]
fn blend(p00: f64, p10: f64, p01: f64, p11: f64, fx: f64, fy: f64) -> f64 {
    if fy == 0.0 {
        return lerp(p00, p10, fx);
    }
    lerp(lerp(p00, p10, fx), lerp(p01, p11, fx), fy)
}

/// Converts a real value to a byte: round half away from zero, clamp to [0, 255].
#[inline]
pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageU8::new(2, 2, 1, vec![0; 3]).is_err());
        assert!(ImageU8::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(ImageU8::new(0, 2, 1, vec![]).is_err());
        assert!(ImageF32::new(2, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let img = ImageU8::new(2, 1, 1, vec![0, 100]).unwrap();
        assert_eq!(img.sample_bilinear(0.5, 0.0, 0).unwrap(), 50.0);
        assert_eq!(img.sample_bilinear(1.0, 0.0, 0).unwrap(), 100.0);

        let img = ImageU8::new(2, 2, 1, vec![0, 0, 100, 100]).unwrap();
        assert_eq!(img.sample_bilinear(0.5, 0.5, 0).unwrap(), 50.0);

        assert!(matches!(
            img.sample_bilinear(1.5, 0.0, 0),
            Err(ImageError::OutOfBounds { .. })
        ));
        assert!(img.sample_bilinear(-0.01, 0.0, 0).is_err());
    }

    #[test]
    fn f32_sample_ignores_zero_weight_nan() {
        let img = ImageF32::new(2, 1, vec![3.0, f32::NAN]).unwrap();
        assert_eq!(img.sample_bilinear(0.0, 0.0).unwrap(), 3.0);
        assert!(img.sample_bilinear(0.5, 0.0).unwrap().is_nan());
    }

    #[test]
    fn mirror_twice_is_identity() {
        let img = ImageU8::new(3, 2, 3, (0..18).collect()).unwrap();
        let m = img.mirrored();
        assert_eq!(m.get(0, 0, 0), img.get(2, 0, 0));
        assert_eq!(m.get(0, 1, 2), img.get(2, 1, 2));
        assert_eq!(m.mirrored(), img);
    }

    proptest! {
        #[test]
        fn bilinear_exact_on_lattice_and_bounded(
            w in 2usize..8, h in 2usize..8, seed in any::<u64>(), fx in 0.0f64..1.0, fy in 0.0f64..1.0
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
            let img = ImageU8::new(w, h, 1, data).unwrap();
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(img.sample_bilinear(x as f64, y as f64, 0).unwrap(), img.get(x, y, 0) as f64);
                }
            }
            let x = (w - 2) as f64 * 0.5 + fx;
            let y = (h - 2) as f64 * 0.5 + fy;
            let v = img.sample_bilinear(x, y, 0).unwrap();
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let n = [img.get(x0, y0, 0), img.get(x0 + 1, y0, 0), img.get(x0, y0 + 1, 0), img.get(x0 + 1, y0 + 1, 0)];
            let lo = *n.iter().min().unwrap() as f64;
            let hi = *n.iter().max().unwrap() as f64;
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }
}
