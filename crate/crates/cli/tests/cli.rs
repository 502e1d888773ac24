use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use stereo_core::image::load_pnm;

fn stereo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no '{key}' in {out}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn render_target_writes_views_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = stereo(&["render-target", "--out", "t", "--count", "3", "--seed", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        assert!(dir.path().join(format!("t/view_{i:03}.pgm")).is_file());
        assert!(dir.path().join(format!("t/view_{i:03}.corners")).is_file());
    }
    assert!(dir.path().join("t/camera.json").is_file());

    let o = stereo(&["render-target", "--out", "t", "--count", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = stereo(&["render-target", "--out", "t", "--board", "6x6"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_from_truth_corners_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    assert!(stereo(&["render-target", "--out", "t", "--count", "5", "--seed", "8"], dir.path()).status.success());
    let corners: Vec<String> = (0..5).map(|i| format!("t/view_{i:03}.corners")).collect();
    let mut args = vec!["calibrate", "--image-size", "640x480", "--out", "cam.json"];
    args.extend(corners.iter().map(String::as_str));
    let o = stereo(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(value(&stdout(&o), "rms_px") < 1e-4);
    assert!((value(&stdout(&o), "fx") - 620.0).abs() < 1e-6);

    let o = stereo(&["calibrate", "--image-size", "640x480", "--out", "x.json", &corners[0], &corners[1]], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("views"), "{}", stderr(&o));
}

#[test]
fn calibrate_from_images() {
    let dir = tempfile::tempdir().unwrap();
    assert!(stereo(&["render-target", "--out", "t", "--count", "6", "--seed", "2"], dir.path()).status.success());
    let o = stereo(&["calibrate", "t", "--out", "cam.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rms = value(&stdout(&o), "rms_px");
    assert!(rms < 0.2, "{rms}");
    assert!(std::fs::read_to_string(dir.path().join("cam.json")).unwrap().contains("camera-v1"));
}

#[test]
fn disparity_validation_messages_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(stereo(&["render-scene", "--out", "s", "--rectified"], dir.path()).status.success());
    let base = ["disparity", "--left", "s/left.pgm", "--right", "s/right.pgm", "--out", "d.pfm"];
    let run = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        stereo(&a, dir.path())
    };
    let o = run(&["--num-disparities", "50"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("num_disparities = 50: must be positive and must be divisible by 16"));
    let o = run(&["--block-size", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("must be an odd number ≥ 1"));
    let o = run(&["--p1", "500", "--p2", "400"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{").unwrap();
    let o = run(&["--params", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = stereo(&["disparity", "--left", "missing.pgm", "--right", "s/right.pgm", "--out", "d.pfm"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let params = stereo_core::SgmParams::with_block_size(3).to_json();
    std::fs::write(dir.path().join("p.json"), params).unwrap();
    let o = run(&["--params", "p.json", "--num-disparities", "64", "--min-disparity", "-8"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn rectify_on_rectified_pair_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    assert!(stereo(&["render-scene", "--out", "s", "--rectified", "--seed", "5"], dir.path()).status.success());
    let o = stereo(
        &[
            "rectify", "--rig", "s/rig.json", "--left", "s/left.pgm", "--right", "s/right.pgm", "--out-left", "l.pgm",
            "--out-right", "r.pgm",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for (a, b) in [("s/left.pgm", "l.pgm"), ("s/right.pgm", "r.pgm")] {
        let a = load_pnm(&std::fs::read(dir.path().join(a)).unwrap()).unwrap();
        let b = load_pnm(&std::fs::read(dir.path().join(b)).unwrap()).unwrap();
        let max = a.data().iter().zip(b.data()).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
        assert!(max <= 1, "max diff {max}");
    }
}

#[test]
fn full_chain_distance() {
    let dir = tempfile::tempdir().unwrap();
    let o = stereo(&["render-scene", "--out", "s", "--distance", "1.5", "--seed", "1"], dir.path());
    assert!(o.status.success());
    let steps: [&[&str]; 2] = [
        &[
            "rectify", "--rig", "s/rig.json", "--left", "s/left.pgm", "--right", "s/right.pgm", "--out-left", "l.pgm",
            "--out-right", "r.pgm",
        ],
        &["disparity", "--left", "l.pgm", "--right", "r.pgm", "--out", "d.pfm", "--preview", "d.ppm"],
    ];
    for s in steps {
        let o = stereo(s, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = stereo(&["depth", "--disparity", "d.pfm", "--rig", "s/rig.json", "--roi", "280,200,80,80"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let z = value(&stdout(&o), "distance_m");
    assert!((z - 1.5).abs() <= 0.03, "{z}");

    let o = stereo(&["depth", "--disparity", "d.pfm", "--rig", "s/rig.json", "--roi", "630,0,40,40"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = stereo(&["depth", "--disparity", "d.pfm", "--rig", "s/rig.json", "--roi", "1,2,3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_rejects_missing_samples_dir_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let o = stereo(&["tune", "--port", "0", "--samples", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = stereo(&["tune", "--port", &port], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));
}

#[tokio::test(flavor = "multi_thread")]
async fn tune_serves_sample_sessions() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_stereo"))
        .args(["tune", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let http = reqwest::Client::builder().timeout(Duration::from_secs(30)).build().unwrap();
    let samples: serde_json::Value = http.get(format!("{url}/api/samples")).send().await.unwrap().json().await.unwrap();
    assert_eq!(samples[0]["name"], "plane");
    let created: serde_json::Value = http
        .post(format!("{url}/api/session/sample"))
        .json(&serde_json::json!({ "name": "plane" }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(created["has_rig"], true);
    let id = created["id"].as_str().unwrap();
    let mut status = 0;
    for _ in 0..300 {
        let r = http.get(format!("{url}/api/session/{id}/disparity.pfm")).send().await.unwrap();
        status = r.status().as_u16();
        if status == 200 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(status, 200);
}
