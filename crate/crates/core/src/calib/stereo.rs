use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::project_with_jacobian;
use super::lm::{minimize, LeastSquares, LmOptions, LmReport};
use super::mono::{estimate_board_pose, retract_pose};
use super::{rodrigues, rodrigues_inv, skew_matrix, CalibError, CameraIntrinsics, DistortionCoeffs, ImageSize, ViewPose};
use crate::target::CornerGrid;

/// Intrinsics plus lens model of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, distortion: DistortionCoeffs) -> Self {
        Self {
            intrinsics,
            distortion,
        }
    }

    pub fn project(&self, pc: &Vector3<f64>) -> Result<Point2<f64>, CalibError> {
        super::project_camera_point(&self.intrinsics, &self.distortion, pc)
    }

    /// Undistorted normalized coordinates of a pixel.
    pub fn normalize(&self, p: &Point2<f64>) -> Result<(f64, f64), CalibError> {
        let n = self.intrinsics.to_normalized(p.x, p.y);
        self.distortion.undistort(n.x, n.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StereoFlag {
    /// Per-view relative poses disagree by more than the spread limit.
    InconsistentPairs { spread_deg: f64 },
    /// The recovered baseline is (numerically) zero.
    DegenerateBaseline,
}

/// Relative pose of the right camera: `X_right = R·X_left + T`.
#[derive(Debug, Clone)]
pub struct StereoCalibration {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rms_px: f64,
    /// Largest angle between a per-view relative rotation and their mean,
    /// measured before refinement.
    pub spread_deg: f64,
    pub flags: Vec<StereoFlag>,
    pub report: LmReport,
}

impl StereoCalibration {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

pub const MAX_RELATIVE_SPREAD_DEG: f64 = 5.0;
const MIN_BASELINE_M: f64 = 1e-6;

fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Clone)]
struct StereoState {
    relative: ViewPose,
    boards: Vec<ViewPose>,
}

struct StereoProblem<'a> {
    left: CameraModel,
    right: CameraModel,
    object: Vec<Vector3<f64>>,
    views_left: &'a [CornerGrid],
    views_right: &'a [CornerGrid],
}

impl LeastSquares for StereoProblem<'_> {
    type State = StereoState;

    fn num_residuals(&self) -> usize {
        4 * self.object.len() * self.views_left.len()
    }

    fn num_params(&self) -> usize {
        6 + 6 * self.views_left.len()
    }

    fn evaluate(
        &self,
        s: &StereoState,
        res: &mut DVector<f64>,
        mut jac: Option<&mut DMatrix<f64>>,
    ) -> Result<(), CalibError> {
        if let Some(j) = jac.as_deref_mut() {
            j.fill(0.0);
        }
        let r = s.relative.rotation;
        let mut row = 0;
        for (v, board) in s.boards.iter().enumerate() {
            let col = 6 + 6 * v;
            let (gl, gr) = (&self.views_left[v], &self.views_right[v]);
            for (i, x) in self.object.iter().enumerate() {
                let rx = board.rotation * x;
                let xl = rx + board.translation;
                let pl = project_with_jacobian(&self.left.intrinsics, &self.left.distortion, &xl)?;
                res[row] = pl.pixel.x - gl.points[i].x;
                res[row + 1] = pl.pixel.y - gl.points[i].y;

                let rxl = r * xl;
                let xr = rxl + s.relative.translation;
                let pr = project_with_jacobian(&self.right.intrinsics, &self.right.distortion, &xr)?;
                res[row + 2] = pr.pixel.x - gr.points[i].x;
                res[row + 3] = pr.pixel.y - gr.points[i].y;

                if let Some(j) = jac.as_deref_mut() {
                    let d_board_rot = -skew_matrix(&rx);
                    j.view_mut((row, col), (2, 3)).copy_from(&(pl.d_point * d_board_rot));
                    j.view_mut((row, col + 3), (2, 3)).copy_from(&pl.d_point);

                    j.view_mut((row + 2, 0), (2, 3))
                        .copy_from(&(pr.d_point * (-skew_matrix(&rxl))));
                    j.view_mut((row + 2, 3), (2, 3)).copy_from(&pr.d_point);
                    let through = pr.d_point * r;
                    j.view_mut((row + 2, col), (2, 3)).copy_from(&(through * d_board_rot));
                    j.view_mut((row + 2, col + 3), (2, 3)).copy_from(&through);
                }
                row += 4;
            }
        }
        Ok(())
    }

    fn retract(&self, s: &StereoState, d: &DVector<f64>) -> StereoState {
        let d = d.as_slice();
        StereoState {
            relative: retract_pose(&s.relative, &d[0..6]),
            boards: s
                .boards
                .iter()
                .enumerate()
                .map(|(v, b)| retract_pose(b, &d[6 + 6 * v..12 + 6 * v]))
                .collect(),
        }
    }
}

/// Relative pose between two calibrated cameras from paired board views.
///
/// Each pair yields a relative pose; their Rodrigues vectors are averaged
/// (a spread above five degrees is flagged), then LM refines R, T and the
/// shared board poses against both cameras with intrinsics held fixed.
pub fn stereo_calibrate(
    views_left: &[CornerGrid],
    views_right: &[CornerGrid],
    left: &CameraModel,
    right: &CameraModel,
) -> Result<StereoCalibration, CalibError> {
    if views_left.len() != views_right.len() {
        return Err(CalibError::InvalidArgument(format!(
            "{} left views but {} right views",
            views_left.len(),
            views_right.len()
        )));
    }
    if views_left.len() < 3 {
        return Err(CalibError::NotEnoughViews {
            needed: 3,
            got: views_left.len(),
        });
    }
    for (a, b) in views_left.iter().zip(views_right) {
        if a.board != b.board {
            return Err(CalibError::InvalidArgument("paired views use different boards".into()));
        }
    }
    let mut boards = Vec::with_capacity(views_left.len());
    let mut rel_rvecs = Vec::new();
    let mut rel_rots = Vec::new();
    let mut rel_ts = Vec::new();
    for (gl, gr) in views_left.iter().zip(views_right) {
        let pl = estimate_board_pose(&left.intrinsics, &left.distortion, gl)?;
        let pr = estimate_board_pose(&right.intrinsics, &right.distortion, gr)?;
        let r_rel = pr.rotation * pl.rotation.transpose();
        rel_ts.push(pr.translation - r_rel * pl.translation);
        rel_rvecs.push(rodrigues_inv(&r_rel)?);
        rel_rots.push(r_rel);
        boards.push(pl);
    }
    let n = rel_rvecs.len() as f64;
    let mean_rvec = rel_rvecs.iter().sum::<Vector3<f64>>() / n;
    let mean_t = rel_ts.iter().sum::<Vector3<f64>>() / n;
    let mean_r = rodrigues(&mean_rvec);
    let spread_deg = rel_rots
        .iter()
        .map(|r| rotation_angle_deg(&(r * mean_r.transpose())))
        .fold(0.0, f64::max);

    let problem = StereoProblem {
        left: *left,
        right: *right,
        object: views_left[0].object_points(),
        views_left,
        views_right,
    };
    let state = StereoState {
        relative: ViewPose::new(mean_r, mean_t),
        boards,
    };
    let (state, report) = minimize(&problem, state, &LmOptions::default())?;
    let n_points = 2 * problem.object.len() * views_left.len();

    let mut flags = Vec::new();
    if spread_deg > MAX_RELATIVE_SPREAD_DEG {
        flags.push(StereoFlag::InconsistentPairs { spread_deg });
    }
    if state.relative.translation.norm() < MIN_BASELINE_M {
        flags.push(StereoFlag::DegenerateBaseline);
    }
    Ok(StereoCalibration {
        rotation: state.relative.rotation,
        translation: state.relative.translation,
        rms_px: (report.final_cost / n_points as f64).sqrt(),
        spread_deg,
        flags,
        report,
    })
}

/// Everything the matcher and depth stages need from a calibrated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoRig {
    pub image_size: ImageSize,
    pub left: CameraModel,
    pub right: CameraModel,
    /// Right relative to left: `X_right = R·X_left + T`.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rect_left: Matrix3<f64>,
    pub rect_right: Matrix3<f64>,
    pub p_left: Matrix3x4<f64>,
    pub p_right: Matrix3x4<f64>,
    /// Maps `(x, y, d, 1)` to homogeneous 3-D coordinates in the rectified
    /// left frame.
    pub q: Matrix4<f64>,
    pub baseline_m: f64,
}

impl StereoRig {
    /// Rectified focal length (shared by both rectified cameras).
    pub fn focal_px(&self) -> f64 {
        self.p_left[(0, 0)]
    }

    pub fn rectified_intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.p_left[(0, 0)], self.p_left[(1, 1)], self.p_left[(0, 2)], self.p_left[(1, 2)])
    }

    /// A rig that is already rectified: identical pinhole cameras, no
    /// distortion, right camera displaced by `baseline_m` along +x.
    pub fn ideal(intrinsics: CameraIntrinsics, baseline_m: f64, image_size: ImageSize) -> Result<StereoRig, CalibError> {
        let cam = CameraModel::new(intrinsics, DistortionCoeffs::ZERO);
        stereo_rectify(&cam, &cam, &Matrix3::identity(), &Vector3::new(-baseline_m, 0.0, 0.0), image_size)
    }

    /// Pixel in the raw left (or right) image to rectified pixel coordinates.
    pub fn rectify_pixel(&self, right: bool, p: &Point2<f64>) -> Result<Point2<f64>, CalibError> {
        let (cam, rot, proj) = if right {
            (&self.right, &self.rect_right, &self.p_right)
        } else {
            (&self.left, &self.rect_left, &self.p_left)
        };
        let (x, y) = cam.normalize(p)?;
        let ray = rot * Vector3::new(x, y, 1.0);
        if ray.z <= 0.0 {
            return Err(CalibError::BehindCamera);
        }
        Ok(Point2::new(
            proj[(0, 0)] * ray.x / ray.z + proj[(0, 2)],
            proj[(1, 1)] * ray.y / ray.z + proj[(1, 2)],
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RigFile::from(self)).expect("rig serializes")
    }

    pub fn from_json(text: &str) -> Result<StereoRig, CalibError> {
        let file: RigFile = serde_json::from_str(text).map_err(|e| CalibError::Format(e.to_string()))?;
        file.try_into()
    }
}

/// Bouguet rectification: split the relative rotation evenly between the two
/// cameras, then rotate both so the baseline becomes the new x-axis.
///
/// Both rectified cameras share focal length and principal point, so the
/// reprojection matrix yields `Z = f·B/d`.
pub fn stereo_rectify(
    left: &CameraModel,
    right: &CameraModel,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    image_size: ImageSize,
) -> Result<StereoRig, CalibError> {
    if translation.norm() < MIN_BASELINE_M {
        return Err(CalibError::ZeroBaseline);
    }
    let om = rodrigues_inv(rotation)?;
    let half = rodrigues(&(om * -0.5));
    let t = half * translation;
    if t.x.abs() <= t.y.abs() {
        return Err(CalibError::InvalidArgument(
            "baseline is closer to vertical than horizontal; only side-by-side rigs are supported".into(),
        ));
    }
    let target = Vector3::new(t.x.signum(), 0.0, 0.0);
    let mut axis = t.cross(&target);
    let nw = axis.norm();
    if nw > 0.0 {
        axis *= (t.x.abs() / t.norm()).clamp(-1.0, 1.0).acos() / nw;
    }
    let align = rodrigues(&axis);
    let rect_left = align * half.transpose();
    let rect_right = align * half;
    let t_rect = rect_right * translation;

    let f = left.intrinsics.fy.min(right.intrinsics.fy);
    let (w, h) = (image_size.width as f64, image_size.height as f64);
    let corners = [(0.0, 0.0), (w - 1.0, 0.0), (0.0, h - 1.0), (w - 1.0, h - 1.0)];
    let mut centre = Vector3::<f64>::zeros();
    for (cam, rot) in [(left, &rect_left), (right, &rect_right)] {
        let mut acc = (0.0, 0.0);
        for &(u, v) in &corners {
            let (x, y) = cam.normalize(&Point2::new(u, v))?;
            let ray = rot * Vector3::new(x, y, 1.0);
            acc.0 += f * ray.x / ray.z;
            acc.1 += f * ray.y / ray.z;
        }
        centre.x += (w - 1.0) * 0.5 - acc.0 / 4.0;
        centre.y += (h - 1.0) * 0.5 - acc.1 / 4.0;
    }
    let (cx, cy) = (centre.x * 0.5, centre.y * 0.5);

    let mut p_left = Matrix3x4::zeros();
    p_left[(0, 0)] = f;
    p_left[(1, 1)] = f;
    p_left[(0, 2)] = cx;
    p_left[(1, 2)] = cy;
    p_left[(2, 2)] = 1.0;
    let mut p_right = p_left;
    p_right[(0, 3)] = t_rect.x * f;

    let mut q = Matrix4::zeros();
    q[(0, 0)] = 1.0;
    q[(0, 3)] = -cx;
    q[(1, 1)] = 1.0;
    q[(1, 3)] = -cy;
    q[(2, 3)] = f;
    q[(3, 2)] = -1.0 / t_rect.x;

    Ok(StereoRig {
        image_size,
        left: *left,
        right: *right,
        rotation: *rotation,
        translation: *translation,
        rect_left,
        rect_right,
        p_left,
        p_right,
        q,
        baseline_m: t_rect.x.abs(),
    })
}

pub const RIG_VERSION: &str = "rig-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFileEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl From<&CameraModel> for CameraFileEntry {
    fn from(c: &CameraModel) -> Self {
        let (k, d) = (&c.intrinsics, &c.distortion);
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            skew: k.skew,
            k1: d.k1,
            k2: d.k2,
            k3: d.k3,
            p1: d.p1,
            p2: d.p2,
        }
    }
}

impl From<&CameraFileEntry> for CameraModel {
    fn from(c: &CameraFileEntry) -> Self {
        CameraModel {
            intrinsics: CameraIntrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                skew: c.skew,
            },
            distortion: DistortionCoeffs {
                k1: c.k1,
                k2: c.k2,
                p1: c.p1,
                p2: c.p2,
                k3: c.k3,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    version: String,
    image_width: usize,
    image_height: usize,
    left: CameraFileEntry,
    right: CameraFileEntry,
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
    rect_left: Vec<f64>,
    rect_right: Vec<f64>,
    #[serde(rename = "P_left")]
    p_left: Vec<f64>,
    #[serde(rename = "P_right")]
    p_right: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<f64>,
    baseline_m: f64,
}

fn row_major<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Vec<f64> {
    (0..R).flat_map(|r| (0..C).map(move |c| m[(r, c)])).collect()
}

fn from_row_major<const R: usize, const C: usize>(
    v: &[f64],
    name: &str,
) -> Result<nalgebra::SMatrix<f64, R, C>, CalibError> {
    if v.len() != R * C || v.iter().any(|x| !x.is_finite()) {
        return Err(CalibError::Format(format!(
            "field {name} needs {} finite values, got {}",
            R * C,
            v.len()
        )));
    }
    Ok(nalgebra::SMatrix::<f64, R, C>::from_row_slice(v))
}

impl From<&StereoRig> for RigFile {
    fn from(r: &StereoRig) -> Self {
        RigFile {
            version: RIG_VERSION.into(),
            image_width: r.image_size.width,
            image_height: r.image_size.height,
            left: (&r.left).into(),
            right: (&r.right).into(),
            r: row_major(&r.rotation),
            t: r.translation.iter().copied().collect(),
            rect_left: row_major(&r.rect_left),
            rect_right: row_major(&r.rect_right),
            p_left: row_major(&r.p_left),
            p_right: row_major(&r.p_right),
            q: row_major(&r.q),
            baseline_m: r.baseline_m,
        }
    }
}

impl TryFrom<RigFile> for StereoRig {
    type Error = CalibError;

    fn try_from(f: RigFile) -> Result<Self, CalibError> {
        if f.version != RIG_VERSION {
            return Err(CalibError::Format(format!(
                "unsupported rig version '{}', expected '{RIG_VERSION}'",
                f.version
            )));
        }
        if f.image_width == 0 || f.image_height == 0 {
            return Err(CalibError::Format("image size must be non-zero".into()));
        }
        if !(f.baseline_m > 0.0) {
            return Err(CalibError::Format("baseline_m must be positive".into()));
        }
        let left = CameraModel::from(&f.left);
        let right = CameraModel::from(&f.right);
        left.intrinsics.validate()?;
        right.intrinsics.validate()?;
        Ok(StereoRig {
            image_size: ImageSize::new(f.image_width, f.image_height),
            left,
            right,
            rotation: from_row_major(&f.r, "R")?,
            translation: from_row_major::<3, 1>(&f.t, "T")?,
            rect_left: from_row_major(&f.rect_left, "rect_left")?,
            rect_right: from_row_major(&f.rect_right, "rect_right")?,
            p_left: from_row_major(&f.p_left, "P_left")?,
            p_right: from_row_major(&f.p_right, "P_right")?,
            q: from_row_major(&f.q, "Q")?,
            baseline_m: f.baseline_m,
        })
    }
}

/// Monocular calibration on disk: one camera's intrinsics and lens model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub version: String,
    pub image_width: usize,
    pub image_height: usize,
    pub camera: CameraFileEntry,
    #[serde(default)]
    pub rms_px: Option<f64>,
}

pub const CAMERA_VERSION: &str = "camera-v1";

impl CameraFile {
    pub fn new(model: &CameraModel, size: ImageSize, rms_px: Option<f64>) -> Self {
        Self {
            version: CAMERA_VERSION.into(),
            image_width: size.width,
            image_height: size.height,
            camera: model.into(),
            rms_px,
        }
    }

    pub fn model(&self) -> CameraModel {
        (&self.camera).into()
    }

    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.image_width, self.image_height)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibError> {
        let f: CameraFile = serde_json::from_str(text).map_err(|e| CalibError::Format(e.to_string()))?;
        if f.version != CAMERA_VERSION {
            return Err(CalibError::Format(format!(
                "unsupported camera version '{}', expected '{CAMERA_VERSION}'",
                f.version
            )));
        }
        f.model().intrinsics.validate()?;
        Ok(f)
    }
}

/// Mean and maximum absolute row difference between paired corner grids.
pub fn vertical_misalignment(left: &CornerGrid, right: &CornerGrid) -> Result<(f64, f64), CalibError> {
    if left.board != right.board || left.points.len() != right.points.len() {
        return Err(CalibError::InvalidArgument("corner grids differ in size".into()));
    }
    Ok(row_differences(&left.points, &right.points))
}

pub(crate) fn row_differences(left: &[Point2<f64>], right: &[Point2<f64>]) -> (f64, f64) {
    let diffs: Vec<f64> = left.iter().zip(right).map(|(a, b)| (a.y - b.y).abs()).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
    (mean, diffs.iter().copied().fold(0.0, f64::max))
}
