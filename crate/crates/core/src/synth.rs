//! Deterministic synthetic data: board poses, projected corner grids,
//! random-dot stereograms and textured-plane stereo scenes.

use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::calib::{
    project_camera_point, rodrigues, stereo_rectify, CalibError, CameraIntrinsics, CameraModel, DistortionCoeffs,
    ImageSize, StereoRig, ViewPose,
};
use crate::image::{to_byte, ImageU8};
use crate::target::{BoardSpec, CornerGrid, TargetError};

pub const DEFAULT_IMAGE_SIZE: ImageSize = ImageSize {
    width: 640,
    height: 480,
};

/// A 640×480 camera with moderate barrel distortion.
pub fn default_camera() -> (CameraIntrinsics, DistortionCoeffs) {
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

fn outline_visible(cam: &CameraModel, board: &BoardSpec, pose: &ViewPose, size: ImageSize, margin: f64) -> bool {
    let outline = board.outline();
    // sample the outline densely so distortion cannot bend an edge out of view
    for i in 0..4 {
        let (a, b) = (outline[i], outline[(i + 1) % 4]);
        for k in 0..=16 {
            let p = a + (b - a) * (k as f64 / 16.0);
            let pc = pose.transform(&p);
            if pc.z < 0.05 {
                return false;
            }
            match cam.project(&pc) {
                Ok(px) => {
                    if px.x < margin
                        || px.y < margin
                        || px.x > size.width as f64 - 1.0 - margin
                        || px.y > size.height as f64 - 1.0 - margin
                    {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
    }
    true
}

fn random_pose(rng: &mut ChaCha8Rng, board: &BoardSpec, focal: f64, size: ImageSize) -> ViewPose {
    let s = board.square_size;
    let extent = (board.cols + 3) as f64 * s;
    // distance at which the printed board spans about 60% of the width
    let z_fit = focal * extent / (0.6 * size.width as f64);
    let z = z_fit * rng.random_range(0.85..1.3);
    let tilt = 30f64.to_radians();
    let rot = rodrigues(&Vector3::new(0.0, 0.0, rng.random_range(-0.25..0.25)))
        * rodrigues(&Vector3::new(0.0, rng.random_range(-tilt..tilt), 0.0))
        * rodrigues(&Vector3::new(rng.random_range(-tilt..tilt), 0.0, 0.0));
    let centre_board = Vector3::new((board.cols - 1) as f64 * s * 0.5, (board.rows - 1) as f64 * s * 0.5, 0.0);
    let spread = 0.15 * z;
    let centre_cam = Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread) * 0.7, z);
    ViewPose::new(rot, centre_cam - rot * centre_board)
}

fn sample_poses(
    board: &BoardSpec,
    focal: f64,
    size: ImageSize,
    n: usize,
    seed: u64,
    accept: impl Fn(&ViewPose) -> bool,
) -> Vec<ViewPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        assert!(tries < 10_000 * (n + 1), "cannot place the board in view");
        let pose = random_pose(&mut rng, board, focal, size);
        if accept(&pose) {
            out.push(pose);
        }
    }
    out
}

/// `n` board-to-camera poses with tilts up to ±30° that keep the whole
/// printed board (margin included) inside the image.
pub fn random_board_poses(
    k: &CameraIntrinsics,
    d: &DistortionCoeffs,
    board: &BoardSpec,
    size: ImageSize,
    n: usize,
    seed: u64,
) -> Vec<ViewPose> {
    let cam = CameraModel::new(*k, *d);
    sample_poses(board, k.fx, size, n, seed, |p| outline_visible(&cam, board, p, size, 4.0))
}

/// Poses in the left camera frame that keep the board visible in both
/// cameras; `relative` maps left to right camera coordinates.
pub fn random_stereo_board_poses(
    left: &CameraModel,
    right: &CameraModel,
    relative: &ViewPose,
    board: &BoardSpec,
    size: ImageSize,
    n: usize,
    seed: u64,
) -> Vec<ViewPose> {
    sample_poses(board, left.intrinsics.fx, size, n, seed, |p| {
        outline_visible(left, board, p, size, 4.0) && outline_visible(right, board, &p.then(relative), size, 4.0)
    })
}

/// Project every inner corner and add isotropic Gaussian noise.
pub fn project_grid(
    k: &CameraIntrinsics,
    d: &DistortionCoeffs,
    board: &BoardSpec,
    pose: &ViewPose,
    noise_px: f64,
    seed: u64,
) -> Result<CornerGrid, TargetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_px.max(0.0)).map_err(|e| TargetError::InvalidBoard(e.to_string()))?;
    let mut pts = Vec::with_capacity(board.corner_count());
    for x in board.object_points() {
        let p = project_camera_point(k, d, &pose.transform(&x))?;
        if noise_px > 0.0 {
            pts.push(Point2::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng)));
        } else {
            pts.push(p);
        }
    }
    CornerGrid::new(*board, pts)
}

/// Uniform random texture with `right(x, y) = left(x + disparity, y)`;
/// columns with no left counterpart get fresh random values.
pub fn random_dot_stereogram(width: usize, height: usize, disparity: usize, seed: u64) -> (ImageU8, ImageU8) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left: Vec<u8> = (0..width * height).map(|_| rng.random()).collect();
    let mut right = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            right[y * width + x] = if x + disparity < width {
                left[y * width + x + disparity]
            } else {
                rng.random()
            };
        }
    }
    (
        ImageU8::new(width, height, 1, left).expect("sizes agree"),
        ImageU8::new(width, height, 1, right).expect("sizes agree"),
    )
}

fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ix as u64, iy as u64] {
        h ^= v.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = h.rotate_left(31).wrapping_mul(0x94d0_49bb_1331_11eb);
    }
    h ^= h >> 29;
    (h % 256) as f64
}

/// Bilinear value noise on a lattice of `cell` meters.
pub fn plane_texture(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let (u, v) = (x / cell, y / cell);
    let (fu, fv) = (u.floor(), v.floor());
    let (ix, iy) = (fu as i64, fv as i64);
    let (a, b) = (u - fu, v - fv);
    let p00 = lattice_value(ix, iy, seed);
    let p10 = lattice_value(ix + 1, iy, seed);
    let p01 = lattice_value(ix, iy + 1, seed);
    let p11 = lattice_value(ix + 1, iy + 1, seed);
    (p00 * (1.0 - a) + p10 * a) * (1.0 - b) + (p01 * (1.0 - a) + p11 * a) * b
}

/// Raw (distorted) views of a textured fronto-parallel plane at `plane_z`
/// meters in the left camera frame, rendered with 2×2 supersampling.
pub fn render_plane_pair(rig: &StereoRig, plane_z: f64, seed: u64) -> Result<(ImageU8, ImageU8), CalibError> {
    let left_origin = Vector3::zeros();
    let rt = rig.rotation.transpose();
    let right_origin = -(rt * rig.translation);
    let left = render_plane_view(&rig.left, &nalgebra::Matrix3::identity(), &left_origin, rig.image_size, plane_z, seed)?;
    let right = render_plane_view(&rig.right, &rt, &right_origin, rig.image_size, plane_z, seed)?;
    Ok((left, right))
}

fn render_plane_view(
    cam: &CameraModel,
    to_left: &nalgebra::Matrix3<f64>,
    origin: &Vector3<f64>,
    size: ImageSize,
    plane_z: f64,
    seed: u64,
) -> Result<ImageU8, CalibError> {
    const CELL_M: f64 = 0.004;
    let offsets = [0.25, 0.75];
    let rows: Result<Vec<Vec<u8>>, CalibError> = (0..size.height)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(size.width);
            for u in 0..size.width {
                let mut acc = 0.0;
                for oy in offsets {
                    for ox in offsets {
                        let p = Point2::new(u as f64 + ox - 0.5, v as f64 + oy - 0.5);
                        let (x, y) = cam.normalize(&p)?;
                        let dir = to_left * Vector3::new(x, y, 1.0);
                        let s = (plane_z - origin.z) / dir.z;
                        if !(s > 0.0) {
                            return Err(CalibError::BehindCamera);
                        }
                        let hit = origin + dir * s;
                        acc += plane_texture(hit.x, hit.y, CELL_M, seed);
                    }
                }
                row.push(to_byte(acc / 4.0));
            }
            Ok(row)
        })
        .collect();
    let data = rows?.concat();
    Ok(ImageU8::new(size.width, size.height, 1, data).expect("sizes agree"))
}

/// Raw rig used for end-to-end checks: 640×480, fx ≈ 700, 6 cm baseline,
/// small relative rotation and mild distortion on both cameras.
pub fn plane_scene_rig() -> Result<StereoRig, CalibError> {
    let left = CameraModel::new(
        CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0),
        DistortionCoeffs {
            k1: -0.05,
            k2: 0.01,
            ..Default::default()
        },
    );
    let right = CameraModel::new(
        CameraIntrinsics::new(702.0, 701.0, 318.0, 242.0),
        DistortionCoeffs {
            k1: -0.04,
            k2: 0.008,
            ..Default::default()
        },
    );
    let rot = rodrigues(&Vector3::new(0.004, -0.01, 0.006));
    stereo_rectify(&left, &right, &rot, &Vector3::new(-0.06, 0.0005, 0.0), DEFAULT_IMAGE_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereogram_shift() {
        let (l, r) = random_dot_stereogram(64, 8, 12, 1);
        for y in 0..8 {
            for x in 0..52 {
                assert_eq!(r.get(x, y, 0), l.get(x + 12, y, 0));
            }
        }
        assert_eq!(random_dot_stereogram(64, 8, 12, 1), (l, r));
    }

    #[test]
    fn poses_are_deterministic_and_visible() {
        let (k, d) = default_camera();
        let b = BoardSpec::default();
        let a = random_board_poses(&k, &d, &b, DEFAULT_IMAGE_SIZE, 5, 9);
        assert_eq!(a, random_board_poses(&k, &d, &b, DEFAULT_IMAGE_SIZE, 5, 9));
        for p in &a {
            let g = project_grid(&k, &d, &b, p, 0.0, 0).unwrap();
            assert!(g.points.iter().all(|q| q.x > 0.0 && q.y > 0.0 && q.x < 639.0 && q.y < 479.0));
        }
    }

    #[test]
    fn noise_has_requested_scale() {
        let (k, d) = default_camera();
        let b = BoardSpec::default();
        let p = random_board_poses(&k, &d, &b, DEFAULT_IMAGE_SIZE, 1, 2)[0];
        let clean = project_grid(&k, &d, &b, &p, 0.0, 0).unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for seed in 0..40 {
            let noisy = project_grid(&k, &d, &b, &p, 0.5, seed).unwrap();
            for (a, c) in noisy.points.iter().zip(&clean.points) {
                sq += (a - c).norm_squared();
                n += 2.0;
            }
        }
        let sigma = (sq / n).sqrt();
        assert!((sigma - 0.5).abs() < 0.03, "{sigma}");
    }

    #[test]
    fn plane_views_share_rows_after_rectification() {
        let rig = plane_scene_rig().unwrap();
        assert!((rig.baseline_m - 0.06).abs() < 1e-3);
        let (l, r) = render_plane_pair(&rig, 1.0, 4).unwrap();
        assert_eq!((l.width(), l.height()), (640, 480));
        assert_ne!(l, r);
    }
}
