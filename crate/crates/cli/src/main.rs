//! `stereo`: batch entry points for calibration, rectification, matching,
//! depth queries and the tuning server.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Failure;

#[derive(Parser)]
#[command(name = "stereo", version, about = "Stereo calibration, matching and depth tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic chessboard views with ground-truth corner files.
    RenderTarget(RenderTargetArgs),
    /// Render a stereo pair of a textured plane with its rig.
    RenderScene(RenderSceneArgs),
    /// Calibrate one camera from chessboard images or corner files.
    Calibrate(CalibrateArgs),
    /// Calibrate a stereo pair and write a rectified rig.
    StereoCalibrate(StereoCalibrateArgs),
    /// Rectify a raw image pair.
    Rectify(RectifyArgs),
    /// Compute a left disparity map with semi-global matching.
    Disparity(DisparityArgs),
    /// Distance of a region of interest from a disparity map.
    Depth(DepthArgs),
    /// Run the interactive tuning server.
    Tune(TuneArgs),
}

#[derive(Args)]
struct RenderTargetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    count: usize,
    /// Inner corners as COLSxROWS.
    #[arg(long, default_value = "9x6")]
    board: String,
    /// Square edge in meters.
    #[arg(long, default_value_t = 0.025)]
    square: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render left/right pairs from a rig instead of single views.
    #[arg(long)]
    stereo: bool,
    /// Relative yaw between the stereo cameras, in degrees.
    #[arg(long, default_value_t = 5.0)]
    rotation_deg: f64,
    #[arg(long, default_value_t = 0.06)]
    baseline: f64,
    /// Subsamples per pixel along each axis.
    #[arg(long, default_value_t = 4)]
    supersample: usize,
}

#[derive(Args)]
struct RenderSceneArgs {
    #[arg(long)]
    out: PathBuf,
    /// Plane distance in meters.
    #[arg(long, default_value_t = 1.0)]
    distance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use an ideal, already rectified rig (fx 700 px, 6 cm baseline).
    #[arg(long)]
    rectified: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Images (.pgm/.ppm) or corner files (.corners/.txt), or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "9x6")]
    board: String,
    #[arg(long, default_value_t = 0.025)]
    square: f64,
    /// Image size WIDTHxHEIGHT, needed when only corner files are given.
    #[arg(long)]
    image_size: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StereoCalibrateArgs {
    #[arg(long, num_args = 1.., required = true)]
    left: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    right: Vec<PathBuf>,
    #[arg(long, default_value = "9x6")]
    board: String,
    #[arg(long, default_value_t = 0.025)]
    square: f64,
    #[arg(long)]
    image_size: Option<String>,
    /// Fixed left camera (camera-v1); calibrated from the views otherwise.
    #[arg(long)]
    left_camera: Option<PathBuf>,
    #[arg(long)]
    right_camera: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RectifyArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out_left: PathBuf,
    #[arg(long)]
    out_right: PathBuf,
}

/// Matcher settings; flags override `--params`.
#[derive(Args, Default)]
struct SgmFlags {
    /// Parameter file (sgm-v1 JSON).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    min_disparity: Option<i32>,
    #[arg(long)]
    num_disparities: Option<u32>,
    #[arg(long)]
    block_size: Option<u32>,
    #[arg(long)]
    p1: Option<u32>,
    #[arg(long)]
    p2: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    disp12_max_diff: Option<i32>,
    #[arg(long)]
    uniqueness_ratio: Option<u32>,
    #[arg(long)]
    speckle_window_size: Option<u32>,
    #[arg(long)]
    speckle_range: Option<f32>,
    #[arg(long)]
    num_paths: Option<u32>,
}

#[derive(Args)]
struct DisparityArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Output disparity map (PFM).
    #[arg(long)]
    out: PathBuf,
    /// Optional pseudocolored preview (PPM).
    #[arg(long)]
    preview: Option<PathBuf>,
    #[command(flatten)]
    sgm: SgmFlags,
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    /// Region as x,y,w,h.
    #[arg(long)]
    roi: String,
    /// mean or median.
    #[arg(long, default_value = "mean")]
    statistic: String,
    /// Optional per-pixel depth map (PFM).
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Optional point cloud (text, one `x y z` per line).
    #[arg(long)]
    cloud: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of sample pairs replacing the bundled ones.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Static UI files to serve at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::RenderTarget(a) => commands::render_target(a),
        Command::RenderScene(a) => commands::render_scene(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::StereoCalibrate(a) => commands::stereo_calibrate(a),
        Command::Rectify(a) => commands::rectify(a),
        Command::Disparity(a) => commands::disparity(a),
        Command::Depth(a) => commands::depth(a),
        Command::Tune(a) => commands::tune(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
