use nalgebra::{DMatrix, DVector, Point2, Vector3};

use super::camera::{pack_intrinsics, project_with_jacobian, unpack_intrinsics, NUM_INTRINSIC_PARAMS};
use super::homography::estimate_homography;
use super::lm::{minimize, LeastSquares, LmOptions, LmReport};
use super::zhang::{pose_from_homography, zhang_init};
use super::{rodrigues, skew_matrix, CalibError, CameraIntrinsics, DistortionCoeffs, ImageSize, ViewPose};
use crate::target::CornerGrid;

/// Result of a monocular calibration.
#[derive(Debug, Clone)]
pub struct MonoCalibration {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
    pub poses: Vec<ViewPose>,
    /// Root mean square reprojection error per corner, in pixels.
    pub rms_px: f64,
    /// Set when the closed-form seed failed and the heuristic seed was used.
    pub heuristic_seed: bool,
    pub report: LmReport,
}

/// One board observation: board points and their measured pixels.
pub(crate) struct Observation<'a> {
    pub object: Vec<Vector3<f64>>,
    pub image: &'a [Point2<f64>],
}

#[derive(Clone)]
pub(crate) struct MonoState {
    pub intr: [f64; NUM_INTRINSIC_PARAMS],
    pub skew: f64,
    pub poses: Vec<ViewPose>,
}

pub(crate) struct MonoProblem<'a> {
    pub views: Vec<Observation<'a>>,
}

/// Left-multiplicative update of a pose by a 6-vector (rotation, translation).
pub(crate) fn retract_pose(pose: &ViewPose, d: &[f64]) -> ViewPose {
    ViewPose {
        rotation: rodrigues(&Vector3::new(d[0], d[1], d[2])) * pose.rotation,
        translation: pose.translation + Vector3::new(d[3], d[4], d[5]),
    }
}

impl LeastSquares for MonoProblem<'_> {
    type State = MonoState;

    fn num_residuals(&self) -> usize {
        self.views.iter().map(|v| 2 * v.image.len()).sum()
    }

    fn num_params(&self) -> usize {
        NUM_INTRINSIC_PARAMS + 6 * self.views.len()
    }

    fn evaluate(
        &self,
        s: &MonoState,
        res: &mut DVector<f64>,
        mut jac: Option<&mut DMatrix<f64>>,
    ) -> Result<(), CalibError> {
        let (k, d) = unpack_intrinsics(&s.intr, s.skew);
        if let Some(j) = jac.as_deref_mut() {
            j.fill(0.0);
        }
        let mut row = 0;
        for (v, (obs, pose)) in self.views.iter().zip(&s.poses).enumerate() {
            let col = NUM_INTRINSIC_PARAMS + 6 * v;
            for (x, m) in obs.object.iter().zip(obs.image) {
                let rx = pose.rotation * x;
                let pc = rx + pose.translation;
                let pj = project_with_jacobian(&k, &d, &pc)?;
                res[row] = pj.pixel.x - m.x;
                res[row + 1] = pj.pixel.y - m.y;
                if let Some(j) = jac.as_deref_mut() {
                    j.view_mut((row, 0), (2, NUM_INTRINSIC_PARAMS))
                        .copy_from(&pj.d_intrinsics);
                    let d_rot = pj.d_point * (-skew_matrix(&rx));
                    j.view_mut((row, col), (2, 3)).copy_from(&d_rot);
                    j.view_mut((row, col + 3), (2, 3)).copy_from(&pj.d_point);
                }
                row += 2;
            }
        }
        Ok(())
    }

    fn retract(&self, s: &MonoState, delta: &DVector<f64>) -> MonoState {
        let mut intr = s.intr;
        for (i, v) in intr.iter_mut().enumerate() {
            *v += delta[i];
        }
        let poses = s
            .poses
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let o = NUM_INTRINSIC_PARAMS + 6 * v;
                retract_pose(p, delta.as_slice().get(o..o + 6).unwrap())
            })
            .collect();
        MonoState {
            intr,
            skew: s.skew,
            poses,
        }
    }
}

fn board_plane_points(grid: &CornerGrid) -> Vec<Point2<f64>> {
    grid.object_points().iter().map(|p| Point2::new(p.x, p.y)).collect()
}

/// Heuristic seed used when the closed-form initialization fails.
pub fn heuristic_intrinsics(size: ImageSize) -> CameraIntrinsics {
    let w = size.width as f64;
    let h = size.height as f64;
    let f = (w * w + h * h).sqrt();
    CameraIntrinsics::new(f, f, (w - 1.0) * 0.5, (h - 1.0) * 0.5)
}

/// Calibrates one camera from three or more full chessboard views.
///
/// Seeds with the closed-form conic solution (falling back to an
/// image-centre seed when it fails), per-view poses from the homographies and
/// zero distortion, then refines every parameter jointly with LM.
pub fn calibrate_camera(views: &[CornerGrid], image_size: ImageSize) -> Result<MonoCalibration, CalibError> {
    calibrate_camera_with(views, image_size, &LmOptions::default())
}

pub fn calibrate_camera_with(
    views: &[CornerGrid],
    image_size: ImageSize,
    opts: &LmOptions,
) -> Result<MonoCalibration, CalibError> {
    if views.len() < 3 {
        return Err(CalibError::NotEnoughViews {
            needed: 3,
            got: views.len(),
        });
    }
    let mut homographies = Vec::with_capacity(views.len());
    for g in views {
        homographies.push(estimate_homography(&board_plane_points(g), &g.points)?);
    }
    let (k0, heuristic_seed) = match zhang_init(&homographies) {
        Ok(k) => (k, false),
        Err(_) => (heuristic_intrinsics(image_size), true),
    };
    let poses = homographies
        .iter()
        .map(|h| pose_from_homography(&k0, h))
        .collect::<Result<Vec<_>, _>>()?;

    let problem = MonoProblem {
        views: views
            .iter()
            .map(|g| Observation {
                object: g.object_points(),
                image: &g.points,
            })
            .collect(),
    };
    let state = MonoState {
        intr: pack_intrinsics(&k0, &DistortionCoeffs::ZERO),
        skew: 0.0,
        poses,
    };
    let (state, report) = minimize(&problem, state, opts)?;
    let (intrinsics, distortion) = unpack_intrinsics(&state.intr, state.skew);
    if intrinsics.validate().is_err() || !distortion.is_finite() {
        return Err(CalibError::Divergence(format!("non-physical result {intrinsics:?}")));
    }
    let n_points: usize = views.iter().map(|g| g.points.len()).sum();
    Ok(MonoCalibration {
        intrinsics,
        distortion,
        poses: state.poses,
        rms_px: (report.final_cost / n_points as f64).sqrt(),
        heuristic_seed,
        report,
    })
}

/// Pose of a board from one view with known intrinsics: homography seed in
/// normalized coordinates, then LM on the six pose parameters.
pub fn estimate_board_pose(
    k: &CameraIntrinsics,
    dist: &DistortionCoeffs,
    grid: &CornerGrid,
) -> Result<ViewPose, CalibError> {
    let normalized = grid
        .points
        .iter()
        .map(|p| {
            let n = k.to_normalized(p.x, p.y);
            dist.undistort(n.x, n.y).map(|(x, y)| Point2::new(x, y))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let h = estimate_homography(&board_plane_points(grid), &normalized)?;
    let seed = pose_from_homography(&CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0), &h)?;
    let problem = PoseProblem {
        k: *k,
        dist: *dist,
        object: grid.object_points(),
        image: &grid.points,
    };
    let (pose, _) = minimize(&problem, seed, &LmOptions::default())?;
    Ok(pose)
}

struct PoseProblem<'a> {
    k: CameraIntrinsics,
    dist: DistortionCoeffs,
    object: Vec<Vector3<f64>>,
    image: &'a [Point2<f64>],
}

impl LeastSquares for PoseProblem<'_> {
    type State = ViewPose;

    fn num_residuals(&self) -> usize {
        2 * self.image.len()
    }

    fn num_params(&self) -> usize {
        6
    }

    fn evaluate(
        &self,
        pose: &ViewPose,
        res: &mut DVector<f64>,
        mut jac: Option<&mut DMatrix<f64>>,
    ) -> Result<(), CalibError> {
        for (i, (x, m)) in self.object.iter().zip(self.image).enumerate() {
            let rx = pose.rotation * x;
            let pj = project_with_jacobian(&self.k, &self.dist, &(rx + pose.translation))?;
            res[2 * i] = pj.pixel.x - m.x;
            res[2 * i + 1] = pj.pixel.y - m.y;
            if let Some(j) = jac.as_deref_mut() {
                j.view_mut((2 * i, 0), (2, 3))
                    .copy_from(&(pj.d_point * (-skew_matrix(&rx))));
                j.view_mut((2 * i, 3), (2, 3)).copy_from(&pj.d_point);
            }
        }
        Ok(())
    }

    fn retract(&self, pose: &ViewPose, d: &DVector<f64>) -> ViewPose {
        retract_pose(pose, d.as_slice())
    }
}

/// Pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Camera matrix for undistorted output, trading valid pixels against
/// retained field of view.
///
/// `alpha = 0` maps the largest rectangle inside the undistorted image border
/// onto the full output (no invalid pixels); `alpha = 1` maps the border's
/// bounding box (every source pixel kept). Intermediate values interpolate
/// the two rectangles linearly. Also returns the valid-pixel rectangle of the
/// new image.
pub fn optimal_new_intrinsics(
    k: &CameraIntrinsics,
    dist: &DistortionCoeffs,
    size: ImageSize,
    alpha: f64,
) -> Result<(CameraIntrinsics, PixelRect), CalibError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CalibError::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (w, h) = (size.width, size.height);
    let undist = |u: f64, v: f64| -> Result<(f64, f64), CalibError> {
        let n = k.to_normalized(u, v);
        dist.undistort(n.x, n.y)
    };
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    // inner: tightest edge of each side; outer: bounding box of the border
    let mut inner = [f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY];
    let mut outer = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut visit = |x: f64, y: f64, side: Option<usize>| {
        outer[0] = outer[0].min(x);
        outer[1] = outer[1].max(x);
        outer[2] = outer[2].min(y);
        outer[3] = outer[3].max(y);
        match side {
            Some(0) => inner[0] = inner[0].max(x),
            Some(1) => inner[1] = inner[1].min(x),
            Some(2) => inner[2] = inner[2].max(y),
            Some(3) => inner[3] = inner[3].min(y),
            _ => {}
        }
    };
    for u in 0..w {
        let (x, y) = undist(u as f64, 0.0)?;
        visit(x, y, Some(2));
        let (x, y) = undist(u as f64, hm)?;
        visit(x, y, Some(3));
    }
    for v in 0..h {
        let (x, y) = undist(0.0, v as f64)?;
        visit(x, y, Some(0));
        let (x, y) = undist(wm, v as f64)?;
        visit(x, y, Some(1));
    }
    if !(inner[1] > inner[0]) || !(inner[3] > inner[2]) {
        return Err(CalibError::Degenerate("undistorted border encloses no rectangle".into()));
    }
    let rect: Vec<f64> = (0..4).map(|i| inner[i] + alpha * (outer[i] - inner[i])).collect();
    let fx = wm / (rect[1] - rect[0]);
    let fy = hm / (rect[3] - rect[2]);
    let new_k = CameraIntrinsics::new(fx, fy, -fx * rect[0], -fy * rect[2]);

    // valid region: the inner rectangle seen through the new camera
    let eps = 1e-6;
    let x0 = (fx * inner[0] + new_k.cx - eps).ceil().max(0.0);
    let x1 = (fx * inner[1] + new_k.cx + eps).floor().min(wm);
    let y0 = (fy * inner[2] + new_k.cy - eps).ceil().max(0.0);
    let y1 = (fy * inner[3] + new_k.cy + eps).floor().min(hm);
    let roi = PixelRect {
        x: x0 as usize,
        y: y0 as usize,
        w: (x1 - x0 + 1.0).max(0.0) as usize,
        h: (y1 - y0 + 1.0).max(0.0) as usize,
    };
    Ok((new_k, roi))
}

#[cfg(test)]
mod tests {
    use super::super::lm::{cost_gradient, numeric_gradient};
    use super::*;
    use crate::calib::project_point;
    use crate::synth;
    use crate::target::BoardSpec;

    fn truth() -> (CameraIntrinsics, DistortionCoeffs) {
        (
            CameraIntrinsics::new(620.0, 615.0, 322.0, 238.0),
            DistortionCoeffs {
                k1: -0.12,
                k2: 0.05,
                p1: 0.001,
                p2: -0.0008,
                k3: 0.0,
            },
        )
    }

    fn views(n: usize, seed: u64, noise: f64) -> (Vec<CornerGrid>, Vec<ViewPose>) {
        let (k, d) = truth();
        let board = BoardSpec::default();
        let size = ImageSize::new(640, 480);
        let poses = synth::random_board_poses(&k, &d, &board, size, n, seed);
        let grids = poses
            .iter()
            .enumerate()
            .map(|(i, p)| synth::project_grid(&k, &d, &board, p, noise, seed.wrapping_add(i as u64)).unwrap())
            .collect();
        (grids, poses)
    }

    #[test]
    fn noise_free_recovery() {
        let (k, d) = truth();
        let (grids, _) = views(10, 5, 0.0);
        let cal = calibrate_camera(&grids, ImageSize::new(640, 480)).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(cal.intrinsics.fx, k.fx) < 1e-3);
        assert!(rel(cal.intrinsics.fy, k.fy) < 1e-3);
        assert!(rel(cal.intrinsics.cx, k.cx) < 1e-3);
        assert!(rel(cal.intrinsics.cy, k.cy) < 1e-3);
        assert!(rel(cal.distortion.k1, d.k1) < 1e-3);
        assert!(cal.rms_px < 1e-6, "rms {}", cal.rms_px);
        assert!(!cal.heuristic_seed);
        assert!(cal.poses.iter().all(|p| crate::calib::is_rotation(&p.rotation, 1e-9)));
    }

    #[test]
    fn noisy_recovery() {
        let (k, _) = truth();
        let (grids, _) = views(10, 9, 0.1);
        let cal = calibrate_camera(&grids, ImageSize::new(640, 480)).unwrap();
        assert!(((cal.intrinsics.fx - k.fx) / k.fx).abs() < 5e-3);
        assert!(((cal.intrinsics.fy - k.fy) / k.fy).abs() < 5e-3);
        assert!(cal.rms_px > 0.05 && cal.rms_px < 0.2, "rms {}", cal.rms_px);
        assert!(cal.report.final_cost <= cal.report.initial_cost);
    }

    #[test]
    fn thirty_views_of_nine_by_six() {
        let (grids, _) = views(30, 21, 0.1);
        let cal = calibrate_camera(&grids, ImageSize::new(640, 480)).unwrap();
        assert!(cal.rms_px < 0.2);
        assert_eq!(cal.poses.len(), 30);
    }

    #[test]
    fn too_few_views() {
        let (grids, _) = views(3, 1, 0.0);
        assert!(matches!(
            calibrate_camera(&grids[..2], ImageSize::new(640, 480)),
            Err(CalibError::NotEnoughViews { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (k, d) = truth();
        let (grids, poses) = views(4, 13, 0.3);
        let problem = MonoProblem {
            views: grids
                .iter()
                .map(|g| Observation {
                    object: g.object_points(),
                    image: &g.points,
                })
                .collect(),
        };
        let mut intr = pack_intrinsics(&k, &d);
        intr[0] += 3.0;
        intr[4] += 0.01;
        let state = MonoState { intr, skew: 0.0, poses };
        let g = cost_gradient(&problem, &state);
        let ng = numeric_gradient(&problem, &state, 1e-6);
        for i in 0..g.len() {
            let scale = g[i].abs().max(ng[i].abs()).max(1e-3);
            assert!((g[i] - ng[i]).abs() / scale < 1e-4, "param {i}: {} vs {}", g[i], ng[i]);
        }
        // and at the optimum both vanish relative to the starting gradient
        let (opt, _) = minimize(&problem, state.clone(), &LmOptions::default()).unwrap();
        let g_opt = cost_gradient(&problem, &opt);
        let ng_opt = numeric_gradient(&problem, &opt, 1e-6);
        assert!((g_opt - ng_opt).norm() <= 1e-4 * g.norm());
    }

    #[test]
    fn board_pose_from_single_view() {
        let (k, d) = truth();
        let (grids, poses) = views(3, 17, 0.0);
        let est = estimate_board_pose(&k, &d, &grids[1]).unwrap();
        assert!((est.rotation - poses[1].rotation).abs().max() < 1e-9);
        assert!((est.translation - poses[1].translation).norm() < 1e-9);
        let p = project_point(&k, &d, &est, &grids[1].object_points()[7]).unwrap();
        assert!((p - grids[1].points[7]).norm() < 1e-8);
    }

    #[test]
    fn zero_distortion_keeps_camera() {
        let k = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5);
        let size = ImageSize::new(640, 480);
        for alpha in [0.0, 0.5, 1.0] {
            let (nk, roi) = optimal_new_intrinsics(&k, &DistortionCoeffs::ZERO, size, alpha).unwrap();
            assert!((nk.fx - k.fx).abs() < 1e-9 && (nk.cx - k.cx).abs() < 1e-9);
            assert!((nk.fy - k.fy).abs() < 1e-9 && (nk.cy - k.cy).abs() < 1e-9);
            assert_eq!(roi, PixelRect { x: 0, y: 0, w: 640, h: 480 });
        }
        assert!(optimal_new_intrinsics(&k, &DistortionCoeffs::ZERO, size, 1.5).is_err());
    }

    #[test]
    fn barrel_alpha_extremes() {
        let k = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5);
        let d = DistortionCoeffs { k1: -0.25, k2: 0.05, ..Default::default() };
        let size = ImageSize::new(640, 480);
        let (k0, roi0) = optimal_new_intrinsics(&k, &d, size, 0.0).unwrap();
        let (k1, roi1) = optimal_new_intrinsics(&k, &d, size, 1.0).unwrap();
        assert_eq!(roi0, PixelRect { x: 0, y: 0, w: 640, h: 480 });
        assert!(roi1.w < 640 && roi1.h < 480);
        // keeping every source pixel zooms out further than cropping to valid ones
        assert!(k1.fx < k0.fx);

        let pincushion = DistortionCoeffs { k1: 0.2, ..Default::default() };
        let (kp, roip) = optimal_new_intrinsics(&k, &pincushion, size, 0.0).unwrap();
        assert!(kp.fx > k.fx);
        assert_eq!(roip.w, 640);
    }
}
