use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use super::CalibError;

fn hartley_transform(pts: &[Point2<f64>]) -> Result<Matrix3<f64>, CalibError> {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(CalibError::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

#[inline]
fn apply(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Applies a homography to a point.
pub fn apply_homography(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    apply(h, p)
}

/// Smallest right singular vector of `a`, together with the ratio of the
/// second-smallest to the largest singular value (a rank indicator).
pub(crate) fn null_vector(a: DMatrix<f64>) -> Result<(Vec<f64>, f64), CalibError> {
    let cols = a.ncols();
    // a wide matrix loses its null vector in the thin SVD, so pad with zeros
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, a.nrows()).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CalibError::Degenerate("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[*order.last().unwrap()];
    let second = svd.singular_values[order[1]];
    let ratio = if largest > 0.0 { second / largest } else { 0.0 };
    Ok((v_t.row(order[0]).iter().copied().collect(), ratio))
}

/// Normalized DLT estimate of the homography mapping `src` onto `dst`,
/// scaled so `h33 = 1` whenever `|h33| > 1e-12`.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Matrix3<f64>, CalibError> {
    if src.len() != dst.len() {
        return Err(CalibError::Degenerate(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(CalibError::Degenerate(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    let ts = hartley_transform(src)?;
    let td = hartley_transform(dst)?;
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = apply(&ts, s);
        let d = apply(&td, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let (h, ratio) = null_vector(a)?;
    if ratio < 1e-10 {
        return Err(CalibError::Degenerate("rank-deficient homography design matrix".into()));
    }
    let hn = Matrix3::from_row_slice(&h);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| CalibError::Degenerate("normalization not invertible".into()))?;
    let mut out = td_inv * hn * ts;
    if out[(2, 2)].abs() > 1e-12 {
        out /= out[(2, 2)];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn square() -> Vec<Point2<f64>> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn identity_and_scale() {
        let h = estimate_homography(&square(), &square()).unwrap();
        assert_relative_eq!(h, Matrix3::identity(), epsilon = 1e-12);
        let dst: Vec<_> = square().iter().map(|p| Point2::new(2.0 * p.x, 2.0 * p.y)).collect();
        let h = estimate_homography(&square(), &dst).unwrap();
        assert_relative_eq!(h, Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..6).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            estimate_homography(&line, &line),
            Err(CalibError::Degenerate(_))
        ));
        assert!(estimate_homography(&square()[..3], &square()[..3]).is_err());
    }

    #[test]
    fn noisy_fit_below_noise_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let truth = Matrix3::new(1.2, 0.1, 300.0, -0.05, 0.9, 200.0, 1e-4, -2e-4, 1.0);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let src: Vec<_> = (0..20)
            .map(|_| Point2::new(rng.random_range(0.0..400.0), rng.random_range(0.0..300.0)))
            .collect();
        let clean: Vec<_> = src.iter().map(|p| apply(&truth, p)).collect();
        let noisy: Vec<_> = clean
            .iter()
            .map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
            .collect();
        let h = estimate_homography(&src, &noisy).unwrap();
        let rms = (src
            .iter()
            .zip(&clean)
            .map(|(s, c)| (apply(&h, s) - c).norm_squared())
            .sum::<f64>()
            / 20.0)
            .sqrt();
        // error against the noise-free truth, per point (2D noise is 0.5·√2)
        assert!(rms < 0.5 * std::f64::consts::SQRT_2, "rms {rms}");
    }
}
