use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use stereo_core::calib::{
    calibrate_camera, rectify_pair, rodrigues, stereo_calibrate as calibrate_pair, stereo_rectify, CameraFile,
};
use stereo_core::depth::{cloud_to_text, disparity_to_depth, reproject_to_cloud, roi_disparity, roi_distance_with};
use stereo_core::image::{load_pfm, load_pnm, pseudocolor, save_pfm, save_pnm};
use stereo_core::sgm::compute_disparity;
use stereo_core::synth::{
    default_camera, plane_scene_rig, random_board_poses, random_stereo_board_poses, render_plane_pair,
    DEFAULT_IMAGE_SIZE,
};
use stereo_core::target::{detect_corners, render_chessboard, RenderOptions};
use stereo_core::{
    BoardSpec, CameraIntrinsics, CameraModel, CornerGrid, ImageSize, ImageU8, Roi, RoiStatistic, SgmParams,
    SgmParamsPatch, StereoRig, ViewPose,
};

use crate::error::Failure;
use crate::{
    CalibrateArgs, DepthArgs, DisparityArgs, RectifyArgs, RenderSceneArgs, RenderTargetArgs, SgmFlags,
    StereoCalibrateArgs, TuneArgs,
};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn read_gray(path: &Path) -> Result<ImageU8, Failure> {
    let img = load_pnm(&read(path)?).map_err(|e| Failure::io(path, e))?;
    Ok(img.to_gray())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn board(spec: &str, square: f64) -> Result<BoardSpec, Failure> {
    let b: BoardSpec = spec.parse()?;
    Ok(BoardSpec::new(b.cols, b.rows, square)?)
}

fn parse_size(s: &str) -> Result<ImageSize, Failure> {
    let bad = || Failure::Invalid(format!("image size must be WIDTHxHEIGHT, got '{s}'"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok(ImageSize::new(w, h))
}

pub fn render_target(a: RenderTargetArgs) -> Result<(), Failure> {
    if a.count == 0 {
        return Err(Failure::Invalid("--count must be at least 1".into()));
    }
    let board = board(&a.board, a.square)?;
    let (k, d) = default_camera();
    let size = DEFAULT_IMAGE_SIZE;
    let opts = RenderOptions {
        supersample: a.supersample,
    };
    create_dir(&a.out)?;
    let cam = CameraModel::new(k, d);

    if !a.stereo {
        let poses = random_board_poses(&k, &d, &board, size, a.count, a.seed);
        write(&a.out.join("camera.json"), CameraFile::new(&cam, size, None).to_json())?;
        for (i, pose) in poses.iter().enumerate() {
            let img = render_chessboard(&board, &k, &d, pose, size, opts)?;
            write(&a.out.join(format!("view_{i:03}.pgm")), save_pnm(&img))?;
            write(&a.out.join(format!("view_{i:03}.corners")), truth_grid(&cam, &board, pose)?.to_text())?;
        }
        println!("views: {}", poses.len());
        return Ok(());
    }

    let rotation = rodrigues(&Vector3::new(0.0, a.rotation_deg.to_radians(), 0.0));
    let center = Vector3::new(a.baseline, 0.0, 0.0);
    let relative = ViewPose::new(rotation, -(rotation * center));
    let truth = stereo_rectify(&cam, &cam, &relative.rotation, &relative.translation, size)?;
    write(&a.out.join("camera_left.json"), CameraFile::new(&cam, size, None).to_json())?;
    write(&a.out.join("camera_right.json"), CameraFile::new(&cam, size, None).to_json())?;
    write(&a.out.join("rig_truth.json"), truth.to_json())?;
    let poses = random_stereo_board_poses(&cam, &cam, &relative, &board, size, a.count, a.seed);
    for (i, pose) in poses.iter().enumerate() {
        for (side, p) in [("left", *pose), ("right", pose.then(&relative))] {
            let img = render_chessboard(&board, &k, &d, &p, size, opts)?;
            write(&a.out.join(format!("{side}_{i:03}.pgm")), save_pnm(&img))?;
            write(&a.out.join(format!("{side}_{i:03}.corners")), truth_grid(&cam, &board, &p)?.to_text())?;
        }
    }
    println!("pairs: {}", poses.len());
    Ok(())
}

fn truth_grid(cam: &CameraModel, board: &BoardSpec, pose: &ViewPose) -> Result<CornerGrid, Failure> {
    let pts = board
        .object_points()
        .iter()
        .map(|p| cam.project(&pose.transform(p)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CornerGrid::new(*board, pts)?)
}

pub fn render_scene(a: RenderSceneArgs) -> Result<(), Failure> {
    if !(a.distance > 0.0) {
        return Err(Failure::Invalid(format!("--distance must be positive, got {}", a.distance)));
    }
    let rig = if a.rectified {
        StereoRig::ideal(CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0), 0.06, DEFAULT_IMAGE_SIZE)?
    } else {
        plane_scene_rig()?
    };
    let (left, right) = render_plane_pair(&rig, a.distance, a.seed)?;
    create_dir(&a.out)?;
    write(&a.out.join("left.pgm"), save_pnm(&left))?;
    write(&a.out.join("right.pgm"), save_pnm(&right))?;
    write(&a.out.join("rig.json"), rig.to_json())?;
    println!("distance_m: {}", a.distance);
    println!("expected_disparity_px: {:.4}", rig.focal_px() * rig.baseline_m / a.distance);
    Ok(())
}

fn is_corner_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("corners" | "txt"))
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm"))
}

/// Files and directory contents, directories expanded in name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Failure::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| is_image(f) || is_corner_file(f))
                .collect();
            entries.sort();
            // a directory holding both prefers the images
            if entries.iter().any(|f| is_image(f)) {
                entries.retain(|f| is_image(f));
            }
            out.extend(entries);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Failure::io(p, "no such file or directory"));
        }
    }
    Ok(out)
}

struct Views {
    grids: Vec<Option<CornerGrid>>,
    size: Option<ImageSize>,
}

/// Detects corners in images and reads corner files. Views where detection
/// fails stay `None` so pairs remain aligned.
fn load_views(files: &[PathBuf], board: &BoardSpec) -> Result<Views, Failure> {
    let mut grids = Vec::with_capacity(files.len());
    let mut size = None;
    for f in files {
        if is_corner_file(f) {
            let g = CornerGrid::from_text(&read_text(f)?).map_err(|e| Failure::io(f, e))?;
            if (g.board.cols, g.board.rows) != (board.cols, board.rows) {
                return Err(Failure::Invalid(format!(
                    "{}: board {}x{} does not match {}x{}",
                    f.display(),
                    g.board.cols,
                    g.board.rows,
                    board.cols,
                    board.rows
                )));
            }
            grids.push(Some(CornerGrid::new(*board, g.points)?));
        } else {
            let img = read_gray(f)?;
            let s = ImageSize::new(img.width(), img.height());
            if size.is_some_and(|prev| prev != s) {
                return Err(Failure::Invalid(format!("{}: image size differs from earlier views", f.display())));
            }
            size = Some(s);
            match detect_corners(&img, board) {
                Ok(g) => grids.push(Some(g)),
                Err(e) => {
                    eprintln!("warning: {}: {e}", f.display());
                    grids.push(None);
                }
            }
        }
    }
    Ok(Views { grids, size })
}

fn resolve_size(views: &Views, flag: Option<&str>) -> Result<ImageSize, Failure> {
    match (flag, views.size) {
        (Some(s), _) => parse_size(s),
        (None, Some(s)) => Ok(s),
        (None, None) => Err(Failure::Invalid("--image-size is required with corner files only".into())),
    }
}

pub fn calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let board = board(&a.board, a.square)?;
    let files = expand_inputs(&a.inputs)?;
    let views = load_views(&files, &board)?;
    let size = resolve_size(&views, a.image_size.as_deref())?;
    let grids: Vec<CornerGrid> = views.grids.into_iter().flatten().collect();
    let cal = calibrate_camera(&grids, size)?;
    let model = CameraModel::new(cal.intrinsics, cal.distortion);
    write(&a.out, CameraFile::new(&model, size, Some(cal.rms_px)).to_json())?;
    let k = cal.intrinsics;
    println!("views: {}", grids.len());
    println!("fx: {:.6}", k.fx);
    println!("fy: {:.6}", k.fy);
    println!("cx: {:.6}", k.cx);
    println!("cy: {:.6}", k.cy);
    println!("rms_px: {:.6e}", cal.rms_px);
    Ok(())
}

fn camera_for(fixed: Option<&Path>, grids: &[CornerGrid], size: ImageSize) -> Result<CameraModel, Failure> {
    match fixed {
        Some(p) => Ok(CameraFile::from_json(&read_text(p)?)
            .map_err(|e| Failure::io(p, e))?
            .model()),
        None => {
            let cal = calibrate_camera(grids, size)?;
            Ok(CameraModel::new(cal.intrinsics, cal.distortion))
        }
    }
}

pub fn stereo_calibrate(a: StereoCalibrateArgs) -> Result<(), Failure> {
    let board = board(&a.board, a.square)?;
    let lf = expand_inputs(&a.left)?;
    let rf = expand_inputs(&a.right)?;
    if lf.len() != rf.len() {
        return Err(Failure::Invalid(format!("{} left views but {} right views", lf.len(), rf.len())));
    }
    let lv = load_views(&lf, &board)?;
    let rv = load_views(&rf, &board)?;
    let size = resolve_size(&lv, a.image_size.as_deref())?;
    let (mut gl, mut gr) = (Vec::new(), Vec::new());
    for (l, r) in lv.grids.into_iter().zip(rv.grids) {
        if let (Some(l), Some(r)) = (l, r) {
            gl.push(l);
            gr.push(r);
        }
    }
    let left = camera_for(a.left_camera.as_deref(), &gl, size)?;
    let right = camera_for(a.right_camera.as_deref(), &gr, size)?;
    let cal = calibrate_pair(&gl, &gr, &left, &right)?;
    for flag in &cal.flags {
        eprintln!("warning: {flag:?}");
    }
    let rig = stereo_rectify(&left, &right, &cal.rotation, &cal.translation, size)?;
    write(&a.out, rig.to_json())?;
    println!("pairs: {}", gl.len());
    println!("rms_px: {:.6e}", cal.rms_px);
    println!("baseline_m: {:.6}", rig.baseline_m);
    println!("focal_px: {:.6}", rig.focal_px());
    Ok(())
}

fn load_rig(path: &Path) -> Result<StereoRig, Failure> {
    StereoRig::from_json(&read_text(path)?).map_err(|e| Failure::io(path, e))
}

pub fn rectify(a: RectifyArgs) -> Result<(), Failure> {
    let rig = load_rig(&a.rig)?;
    let (l, r) = rectify_pair(&rig, &read_gray(&a.left)?, &read_gray(&a.right)?)?;
    write(&a.out_left, save_pnm(&l))?;
    write(&a.out_right, save_pnm(&r))?;
    Ok(())
}

fn sgm_params(f: &SgmFlags) -> Result<SgmParams, Failure> {
    let base = match &f.params {
        Some(p) => SgmParams::from_json(&read_text(p)?).map_err(|e| Failure::io(p, e))?,
        None => SgmParams::default(),
    };
    let patch = SgmParamsPatch {
        min_disparity: f.min_disparity,
        num_disparities: f.num_disparities,
        block_size: f.block_size,
        p1: f.p1,
        p2: f.p2,
        disp12_max_diff: f.disp12_max_diff,
        uniqueness_ratio: f.uniqueness_ratio,
        speckle_window_size: f.speckle_window_size,
        speckle_range: f.speckle_range,
        num_paths: f.num_paths,
    };
    Ok(base.apply(&patch)?)
}

pub fn disparity(a: DisparityArgs) -> Result<(), Failure> {
    let params = sgm_params(&a.sgm)?;
    let left = read_gray(&a.left)?;
    let right = read_gray(&a.right)?;
    let disp = compute_disparity(&left, &right, &params)?;
    write(&a.out, save_pfm(&disp))?;
    if let Some(p) = &a.preview {
        let img = pseudocolor(&disp, params.min_disparity as f32, params.max_disparity() as f32)?;
        write(p, save_pnm(&img))?;
    }
    let valid = disp.data().iter().filter(|v| v.is_finite()).count();
    println!("valid_fraction: {:.6}", valid as f64 / disp.data().len() as f64);
    Ok(())
}

pub fn depth(a: DepthArgs) -> Result<(), Failure> {
    let stat = match a.statistic.as_str() {
        "mean" => RoiStatistic::Mean,
        "median" => RoiStatistic::Median,
        other => return Err(Failure::Invalid(format!("--statistic must be mean or median, got '{other}'"))),
    };
    let roi: Roi = a.roi.parse()?;
    let disp = load_pfm(&read(&a.disparity)?).map_err(|e| Failure::io(&a.disparity, e))?;
    let rig = load_rig(&a.rig)?;
    if let Some(p) = &a.depth_out {
        write(p, save_pfm(&disparity_to_depth(&disp, &rig)))?;
    }
    if let Some(p) = &a.cloud {
        write(p, cloud_to_text(&reproject_to_cloud(&disp, &rig)))?;
    }
    let r = roi_disparity(&disp, &roi, stat)?;
    println!("disparity_px: {:.6}", r.value);
    println!("valid_fraction: {:.6}", r.valid as f64 / r.total as f64);
    println!("distance_m: {:.6}", roi_distance_with(&disp, &roi, &rig, stat)?);
    Ok(())
}

pub fn tune(a: TuneArgs) -> Result<(), Failure> {
    for dir in [&a.samples, &a.ui].into_iter().flatten() {
        if !dir.is_dir() {
            return Err(Failure::io(dir, "not a directory"));
        }
    }
    let config = stereo_service::Config {
        samples_dir: a.samples,
        ui_dir: a.ui,
    };
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Io(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?;
        println!("listening on http://{local}");
        stereo_service::serve(listener, config)
            .await
            .map_err(|e| Failure::Io(e.to_string()))
    })
}
