use nalgebra::{DMatrix, Matrix3, Vector3};

use super::homography::null_vector;
use super::{CalibError, CameraIntrinsics, ViewPose};

/// Minimum ratio of the second-smallest to the largest singular value of the
/// stacked conic constraints before the system is treated as ill-conditioned.
const CONIC_RANK_TOL: f64 = 1e-8;

fn v_ij(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Closed-form intrinsics from three or more board homographies.
///
/// Homographies are conditioned internally by an affine change of pixel
/// coordinates, which keeps the conic entries on comparable scales. Skew is
/// solved for and then forced to zero.
pub fn zhang_init(homographies: &[Matrix3<f64>]) -> Result<CameraIntrinsics, CalibError> {
    if homographies.len() < 3 {
        return Err(CalibError::NotEnoughViews {
            needed: 3,
            got: homographies.len(),
        });
    }
    // conditioning transform from the images of the board origins
    let origins: Vec<(f64, f64)> = homographies
        .iter()
        .map(|h| (h[(0, 2)] / h[(2, 2)], h[(1, 2)] / h[(2, 2)]))
        .collect();
    let n = origins.len() as f64;
    let cx0 = origins.iter().map(|o| o.0).sum::<f64>() / n;
    let cy0 = origins.iter().map(|o| o.1).sum::<f64>() / n;
    let scale = (cx0 * cx0 + cy0 * cy0).sqrt() + 1.0;
    let norm = Matrix3::new(1.0 / scale, 0.0, -cx0 / scale, 0.0, 1.0 / scale, -cy0 / scale, 0.0, 0.0, 1.0);

    let mut v = DMatrix::<f64>::zeros(2 * homographies.len(), 6);
    for (k, h) in homographies.iter().enumerate() {
        let hn = norm * h;
        let hn = hn / hn.norm();
        let v11 = v_ij(&hn, 0, 0);
        let v22 = v_ij(&hn, 1, 1);
        let v12 = v_ij(&hn, 0, 1);
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    let (b, ratio) = null_vector(v)?;
    if ratio < CONIC_RANK_TOL {
        return Err(CalibError::IllConditioned(format!(
            "board poses do not constrain the intrinsics (singular value ratio {ratio:.2e})"
        )));
    }
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let (b11, b12, b22, b13, b23, b33) = (
        sign * b[0],
        sign * b[1],
        sign * b[2],
        sign * b[3],
        sign * b[4],
        sign * b[5],
    );
    let denom = b11 * b22 - b12 * b12;
    if !(b11 > 0.0) || !(denom > 0.0) {
        return Err(CalibError::InitFailure("absolute conic is not positive definite".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda > 0.0) {
        return Err(CalibError::InitFailure("absolute conic is not positive definite".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / denom).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;

    let k_norm = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let norm_inv = norm.try_inverse().expect("conditioning transform is invertible");
    let k = norm_inv * k_norm;
    let mut intr = CameraIntrinsics::from_matrix(&k);
    intr.skew = 0.0;
    if !intr.fx.is_finite() || !intr.fy.is_finite() || intr.fx <= 0.0 || intr.fy <= 0.0 {
        return Err(CalibError::InitFailure(format!("non-physical focal lengths {intr:?}")));
    }
    Ok(intr)
}

/// Board pose from a homography mapping board (X, Y) to normalized or pixel
/// coordinates under `k`. The board is placed in front of the camera.
pub fn pose_from_homography(k: &CameraIntrinsics, h: &Matrix3<f64>) -> Result<ViewPose, CalibError> {
    let k_inv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| CalibError::InvalidIntrinsics(format!("{k:?}")))?;
    let m = k_inv * h;
    let m1: Vector3<f64> = m.column(0).into();
    let m2: Vector3<f64> = m.column(1).into();
    let m3: Vector3<f64> = m.column(2).into();
    let scale = 2.0 / (m1.norm() + m2.norm());
    if !scale.is_finite() {
        return Err(CalibError::Degenerate("homography columns vanish".into()));
    }
    let sign = if m3.z * scale < 0.0 { -scale } else { scale };
    let r1 = m1 * sign;
    let r2 = m2 * sign;
    let t = m3 * sign;
    let r3 = r1.cross(&r2);
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(ViewPose::new(nearest_rotation(&approx), t))
}

/// Closest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}
