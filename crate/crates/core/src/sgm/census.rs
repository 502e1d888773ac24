use rayon::prelude::*;

use crate::image::{ImageError, ImageU8};

/// Per-pixel census codes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusImage {
    pub width: usize,
    pub height: usize,
    /// Number of meaningful low bits in each code.
    pub bits: u32,
    pub codes: Vec<u32>,
}

impl CensusImage {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.codes[y * self.width + x]
    }
}

pub const CENSUS_RADIUS: usize = 2;
pub const CENSUS_BITS: u32 = 24;

/// 5×5 census transform (24 bits).
pub fn census_transform(gray: &ImageU8) -> Result<CensusImage, ImageError> {
    census_transform_radius(gray, CENSUS_RADIUS)
}

/// Census over a `(2r+1)²` window: bit set iff the neighbour is darker than
/// the centre, most significant bit first in row-major order, centre
/// skipped, coordinates clamped at the border. Panics for `radius > 2`.
pub fn census_transform_radius(gray: &ImageU8, radius: usize) -> Result<CensusImage, ImageError> {
    gray.require_gray()?;
    let bits = ((2 * radius + 1) * (2 * radius + 1) - 1) as u32;
    assert!(bits <= 32, "census window {radius} does not fit in 32 bits");
    let (w, h) = (gray.width(), gray.height());
    let r = radius as i64;
    let data = gray.data();
    let mut codes = vec![0u32; w * h];
    codes.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let c = data[y * w + x];
            let mut code = 0u32;
            for dy in -r..=r {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    code = (code << 1) | (data[yy * w + xx] < c) as u32;
                }
            }
            *out = code;
        }
    });
    Ok(CensusImage {
        width: w,
        height: h,
        bits,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_zero() {
        let c = census_transform(&ImageU8::filled(7, 5, 1, 77)).unwrap();
        assert!(c.codes.iter().all(|&v| v == 0));
        assert_eq!(c.bits, 24);
    }

    #[test]
    fn three_by_three_example() {
        let img = ImageU8::new(3, 3, 1, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let c = census_transform_radius(&img, 1).unwrap();
        assert_eq!(c.get(1, 1), 240);
    }

    #[test]
    fn five_by_five_bit_order() {
        // only the top-left neighbour is darker than the centre
        let mut v = vec![100u8; 25];
        v[0] = 0;
        let img = ImageU8::new(5, 5, 1, v).unwrap();
        let c = census_transform(&img).unwrap();
        assert_eq!(c.get(2, 2), 1 << 23);
        assert!(census_transform(&ImageU8::filled(3, 3, 3, 0)).is_err());
    }

    proptest! {
        #[test]
        fn offset_invariance(w in 1usize..12, h in 1usize..12, seed in any::<u64>(), off in 0u8..60) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..=195)).collect();
            let shifted: Vec<u8> = base.iter().map(|v| v + off).collect();
            let a = census_transform(&ImageU8::new(w, h, 1, base).unwrap()).unwrap();
            let b = census_transform(&ImageU8::new(w, h, 1, shifted).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
