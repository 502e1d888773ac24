use nalgebra::{Matrix2x3, Matrix3, Point2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::CalibError;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn from_matrix(k: &Matrix3<f64>) -> Self {
        Self {
            fx: k[(0, 0)],
            fy: k[(1, 1)],
            cx: k[(0, 2)],
            cy: k[(1, 2)],
            skew: k[(0, 1)],
        }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.skew]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CalibError::InvalidIntrinsics(format!("{self:?}")));
        }
        Ok(())
    }

    /// Normalized coordinates to pixels.
    #[inline]
    pub fn to_pixel(&self, x: f64, y: f64) -> Point2<f64> {
        Point2::new(self.fx * x + self.skew * y + self.cx, self.fy * y + self.cy)
    }

    /// Pixels to normalized coordinates.
    #[inline]
    pub fn to_normalized(&self, u: f64, v: f64) -> Vector2<f64> {
        let y = (v - self.cy) / self.fy;
        let x = (u - self.cx - self.skew * y) / self.fx;
        Vector2::new(x, y)
    }
}

/// Five-coefficient Brown–Conrady lens model. Negative `k1` bends straight
/// lines towards the image edge (barrel), positive `k1` gives pincushion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionCoeffs {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl DistortionCoeffs {
    pub const ZERO: DistortionCoeffs = DistortionCoeffs {
        k1: 0.0,
        k2: 0.0,
        p1: 0.0,
        p2: 0.0,
        k3: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn is_finite(&self) -> bool {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
            .iter()
            .all(|v| v.is_finite())
    }

    #[inline]
    fn radial(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    #[inline]
    fn tangential(&self, x: f64, y: f64, r2: f64) -> (f64, f64) {
        (
            2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Ideal normalized point to distorted normalized point.
    #[inline]
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = self.radial(r2);
        let (tx, ty) = self.tangential(x, y, r2);
        (x * radial + tx, y * radial + ty)
    }

    /// Jacobian of [`distort`](Self::distort) with respect to (x, y).
    #[inline]
    pub fn distort_jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let r2 = x * x + y * y;
        let radial = self.radial(r2);
        let dr = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let xy = 2.0 * x * y * dr;
        [
            [
                radial + 2.0 * x * x * dr + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
                xy + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            ],
            [
                xy + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
                radial + 2.0 * y * y * dr + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
            ],
        ]
    }

    /// Inverts [`distort`](Self::distort) by fixed-point iteration.
    pub fn undistort(&self, xd: f64, yd: f64) -> Result<(f64, f64), CalibError> {
        undistort_normalized(self, xd, yd)
    }
}

pub const UNDISTORT_MAX_ITERS: usize = 25;
pub const UNDISTORT_TOL: f64 = 1e-10;

/// Fixed-point inversion of the lens model, starting from the distorted point.
///
/// Iterates `x <- (x' - tangential(x, y)) / radial(x, y)` until the step falls
/// below 1e-10 or 25 iterations have run. A step that grows five times in a
/// row is reported as divergence, as is an exhausted budget that leaves the
/// point more than 1e-6 away from its distorted image.
pub fn undistort_normalized(dist: &DistortionCoeffs, xd: f64, yd: f64) -> Result<(f64, f64), CalibError> {
    if !xd.is_finite() || !yd.is_finite() {
        return Err(CalibError::NonConvergence { x: xd, y: yd });
    }
    if dist.is_zero() {
        return Ok((xd, yd));
    }
    let (mut x, mut y) = (xd, yd);
    let mut last_step = f64::INFINITY;
    let mut growing = 0;
    for _ in 0..UNDISTORT_MAX_ITERS {
        let r2 = x * x + y * y;
        let radial = dist.radial(r2);
        let (tx, ty) = dist.tangential(x, y, r2);
        let nx = (xd - tx) / radial;
        let ny = (yd - ty) / radial;
        if !nx.is_finite() || !ny.is_finite() {
            return Err(CalibError::NonConvergence { x: xd, y: yd });
        }
        let step = ((nx - x).powi(2) + (ny - y).powi(2)).sqrt();
        x = nx;
        y = ny;
        if step < UNDISTORT_TOL {
            return Ok((x, y));
        }
        if step > last_step {
            growing += 1;
            if growing >= 5 {
                return Err(CalibError::NonConvergence { x: xd, y: yd });
            }
        } else {
            growing = 0;
        }
        last_step = step;
    }
    // iteration budget spent: accept only if the point actually maps back
    let (rx, ry) = dist.distort(x, y);
    if (rx - xd).abs().max((ry - yd).abs()) > 1e-6 {
        return Err(CalibError::NonConvergence { x: xd, y: yd });
    }
    Ok((x, y))
}

/// Rigid transform from board (world) coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl ViewPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rvec(rvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rodrigues(&rvec),
            translation,
        }
    }

    pub fn rvec(&self) -> Vector3<f64> {
        rodrigues_inv(&self.rotation).expect("pose rotation is orthonormal")
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `other ∘ self`: first self, then other.
    pub fn then(&self, other: &ViewPose) -> ViewPose {
        ViewPose {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    pub fn inverse(&self) -> ViewPose {
        let rt = self.rotation.transpose();
        ViewPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[inline]
pub fn skew_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle vector to rotation matrix.
pub fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    if theta < 1e-12 {
        return Matrix3::identity() + skew_matrix(v);
    }
    let k = v / theta;
    let (s, c) = theta.sin_cos();
    Matrix3::identity() * c + (k * k.transpose()) * (1.0 - c) + skew_matrix(&k) * s
}

/// Checks R^T R = I and det R = +1 to within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Rotation matrix to axis-angle vector.
pub fn rodrigues_inv(r: &Matrix3<f64>) -> Result<Vector3<f64>, CalibError> {
    if !is_rotation(r, 1e-6) {
        return Err(CalibError::NotARotation);
    }
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta < 1e-6 {
        return Ok(vee * 0.5);
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return Ok(vee * (theta / (2.0 * theta.sin())));
    }
    // near a half turn: take the axis from the symmetric part
    let sym = (r + r.transpose()) * 0.5;
    let kk = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let i = (0..3)
        .max_by(|&a, &b| kk[(a, a)].total_cmp(&kk[(b, b)]))
        .unwrap();
    let mut axis: Vector3<f64> = kk.column(i).into();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Projects a board point through pose, lens model and intrinsics.
pub fn project_point(
    k: &CameraIntrinsics,
    dist: &DistortionCoeffs,
    pose: &ViewPose,
    point: &Vector3<f64>,
) -> Result<Point2<f64>, CalibError> {
    project_camera_point(k, dist, &pose.transform(point))
}

/// Projects a point already expressed in the camera frame.
#[inline]
pub fn project_camera_point(
    k: &CameraIntrinsics,
    dist: &DistortionCoeffs,
    pc: &Vector3<f64>,
) -> Result<Point2<f64>, CalibError> {
    if pc.z <= 0.0 {
        return Err(CalibError::BehindCamera);
    }
    let (xd, yd) = dist.distort(pc.x / pc.z, pc.y / pc.z);
    Ok(k.to_pixel(xd, yd))
}

/// Number of intrinsic parameters refined by calibration:
/// fx, fy, cx, cy, k1, k2, p1, p2, k3.
pub const NUM_INTRINSIC_PARAMS: usize = 9;

/// Projection plus analytic derivatives with respect to the camera-frame
/// point and the refined intrinsic parameters (skew held fixed).
pub(crate) struct ProjectionJacobian {
    pub pixel: Point2<f64>,
    pub d_point: Matrix2x3<f64>,
    pub d_intrinsics: SMatrix<f64, 2, NUM_INTRINSIC_PARAMS>,
}

pub(crate) fn project_with_jacobian(
    k: &CameraIntrinsics,
    dist: &DistortionCoeffs,
    pc: &Vector3<f64>,
) -> Result<ProjectionJacobian, CalibError> {
    if pc.z <= 0.0 {
        return Err(CalibError::BehindCamera);
    }
    let iz = 1.0 / pc.z;
    let x = pc.x * iz;
    let y = pc.y * iz;
    let (xd, yd) = dist.distort(x, y);
    let dd = dist.distort_jacobian(x, y);
    let r2 = x * x + y * y;

    // d(pixel)/d(distorted)
    let dpix = nalgebra::Matrix2::new(k.fx, k.skew, 0.0, k.fy);
    let ddist = nalgebra::Matrix2::new(dd[0][0], dd[0][1], dd[1][0], dd[1][1]);
    let dnorm = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    let d_point = dpix * ddist * dnorm;

    let mut d_intrinsics = SMatrix::<f64, 2, NUM_INTRINSIC_PARAMS>::zeros();
    d_intrinsics[(0, 0)] = xd;
    d_intrinsics[(1, 1)] = yd;
    d_intrinsics[(0, 2)] = 1.0;
    d_intrinsics[(1, 3)] = 1.0;
    // distortion terms: d(xd, yd)/d(coeff), then through K
    let coeff_cols: [(f64, f64); 5] = [
        (x * r2, y * r2),
        (x * r2 * r2, y * r2 * r2),
        (2.0 * x * y, r2 + 2.0 * y * y),
        (r2 + 2.0 * x * x, 2.0 * x * y),
        (x * r2 * r2 * r2, y * r2 * r2 * r2),
    ];
    for (i, (dx, dy)) in coeff_cols.iter().enumerate() {
        d_intrinsics[(0, 4 + i)] = k.fx * dx + k.skew * dy;
        d_intrinsics[(1, 4 + i)] = k.fy * dy;
    }
    Ok(ProjectionJacobian {
        pixel: k.to_pixel(xd, yd),
        d_point,
        d_intrinsics,
    })
}

/// Intrinsics and distortion packed in calibration parameter order.
pub(crate) fn pack_intrinsics(k: &CameraIntrinsics, d: &DistortionCoeffs) -> [f64; NUM_INTRINSIC_PARAMS] {
    [k.fx, k.fy, k.cx, k.cy, d.k1, d.k2, d.p1, d.p2, d.k3]
}

pub(crate) fn unpack_intrinsics(p: &[f64], skew: f64) -> (CameraIntrinsics, DistortionCoeffs) {
    (
        CameraIntrinsics {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            skew,
        },
        DistortionCoeffs {
            k1: p[4],
            k2: p[5],
            p1: p[6],
            p2: p[7],
            k3: p[8],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0)
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
        let half = rodrigues(&Vector3::new(0.0, 0.0, PI));
        assert_relative_eq!(half, Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)), epsilon = 1e-15);
        let back = rodrigues_inv(&half).unwrap();
        assert_relative_eq!(back, Vector3::new(0.0, 0.0, PI), epsilon = 1e-12);
    }

    #[test]
    fn rodrigues_inv_rejects_non_rotation() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(rodrigues_inv(&m), Err(CalibError::NotARotation)));
        assert!(rodrigues_inv(&(Matrix3::identity() * 2.0)).is_err());
    }

    proptest! {
        #[test]
        fn rodrigues_round_trip(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 1e-3f64..(PI - 1e-6)) {
            let axis = Vector3::new(ax, ay, az);
            prop_assume!(axis.norm() > 1e-3);
            let v = axis.normalize() * angle;
            let r = rodrigues(&v);
            prop_assert!(is_rotation(&r, 1e-12));
            let back = rodrigues_inv(&r).unwrap();
            prop_assert!((back - v).norm() < 1e-9, "{:?} vs {:?}", back, v);
        }

        #[test]
        fn rodrigues_round_trip_fixed_angle(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0) {
            let axis = Vector3::new(ax, ay, az);
            prop_assume!(axis.norm() > 1e-3);
            let v = axis.normalize() * 0.7;
            prop_assert!((rodrigues_inv(&rodrigues(&v)).unwrap() - v).norm() < 1e-12);
        }

        #[test]
        fn undistort_inverts_distort(
            x in -0.49f64..0.49, y in -0.49f64..0.49,
            k1 in -0.3f64..0.3, k2 in -0.1f64..0.1, p1 in -0.01f64..0.01, p2 in -0.01f64..0.01,
        ) {
            let d = DistortionCoeffs { k1, k2, p1, p2, k3: 0.0 };
            let (xd, yd) = d.distort(x, y);
            let (ux, uy) = d.undistort(xd, yd).unwrap();
            let (rx, ry) = d.distort(ux, uy);
            prop_assert!((rx - xd).abs() < 1e-8 && (ry - yd).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let k = k100();
        let z = DistortionCoeffs::ZERO;
        let id = ViewPose::identity();
        let p = project_point(&k, &z, &id, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.x, p.y), (50.0, 50.0));
        let p = project_point(&k, &z, &id, &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!((p.x, p.y), (100.0, 50.0));
        let d = DistortionCoeffs { k1: 0.1, ..z };
        let p = project_point(&k, &d, &id, &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.x, 100.0 * 0.5125 + 50.0, epsilon = 1e-12);
        assert!(matches!(
            project_point(&k, &z, &id, &Vector3::new(0.0, 0.0, -1.0)),
            Err(CalibError::BehindCamera)
        ));
    }

    #[test]
    fn undistort_examples() {
        assert_eq!(DistortionCoeffs::ZERO.undistort(0.3, -0.2).unwrap(), (0.3, -0.2));
        let d = DistortionCoeffs { k1: 0.1, ..Default::default() };
        let (x, y) = d.undistort(0.5125, 0.0).unwrap();
        assert!((x - 0.5).abs() < 1e-8 && y.abs() < 1e-12);
    }

    #[test]
    fn undistort_random_points_tight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = DistortionCoeffs { k1: -0.3, k2: 0.1, p1: 0.01, p2: -0.01, k3: 0.0 };
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let r = rng.random_range(0.0..0.7);
            let a = rng.random_range(0.0..2.0 * PI);
            let (x, y) = (r * a.cos(), r * a.sin());
            let (xd, yd) = d.distort(x, y);
            let (ux, uy) = d.undistort(xd, yd).unwrap();
            let (rx, ry) = d.distort(ux, uy);
            worst = worst.max((rx - xd).abs()).max((ry - yd).abs());
        }
        assert!(worst < 1e-8, "worst round-trip error {worst}");
    }

    #[test]
    fn undistort_flags_divergence() {
        let d = DistortionCoeffs { k1: 5.0, k2: 5.0, ..Default::default() };
        assert!(matches!(d.undistort(2.0, 2.0), Err(CalibError::NonConvergence { .. })));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let k = CameraIntrinsics::new(600.0, 590.0, 320.0, 240.0);
        let d = DistortionCoeffs { k1: -0.2, k2: 0.05, p1: 0.002, p2: -0.001, k3: 0.01 };
        let pc = Vector3::new(0.12, -0.08, 0.6);
        let j = project_with_jacobian(&k, &d, &pc).unwrap();
        let h = 1e-7;
        for c in 0..3 {
            let mut a = pc;
            let mut b = pc;
            a[c] += h;
            b[c] -= h;
            let pa = project_camera_point(&k, &d, &a).unwrap();
            let pb = project_camera_point(&k, &d, &b).unwrap();
            assert_relative_eq!((pa.x - pb.x) / (2.0 * h), j.d_point[(0, c)], max_relative = 1e-6);
            assert_relative_eq!((pa.y - pb.y) / (2.0 * h), j.d_point[(1, c)], max_relative = 1e-6, epsilon = 1e-6);
        }
        let base = pack_intrinsics(&k, &d);
        for p in 0..NUM_INTRINSIC_PARAMS {
            let mut a = base;
            let mut b = base;
            a[p] += h;
            b[p] -= h;
            let (ka, da) = unpack_intrinsics(&a, 0.0);
            let (kb, db) = unpack_intrinsics(&b, 0.0);
            let pa = project_camera_point(&ka, &da, &pc).unwrap();
            let pb = project_camera_point(&kb, &db, &pc).unwrap();
            assert!(((pa.x - pb.x) / (2.0 * h) - j.d_intrinsics[(0, p)]).abs() < 1e-4);
            assert!(((pa.y - pb.y) / (2.0 * h) - j.d_intrinsics[(1, p)]).abs() < 1e-4);
        }
    }

    #[test]
    fn pose_inverse_and_compose() {
        let p = ViewPose::from_rvec(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let id = p.then(&p.inverse());
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }
}
