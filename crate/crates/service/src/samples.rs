use std::path::Path;

use serde::Serialize;
use stereo_core::image::load_pnm;
use stereo_core::{ImageU8, StereoRig};

use crate::ServiceError;

/// A named stereo pair the UI can open without uploading anything.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub left: ImageU8,
    pub right: ImageU8,
    pub rig: Option<StereoRig>,
}

#[derive(Debug, Serialize)]
pub struct SampleInfo {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub has_rig: bool,
}

impl Sample {
    pub fn info(&self) -> SampleInfo {
        SampleInfo {
            name: self.name.clone(),
            width: self.left.width(),
            height: self.left.height(),
            has_rig: self.rig.is_some(),
        }
    }

    fn parse(name: &str, left: &[u8], right: &[u8], rig: Option<&str>) -> Result<Sample, ServiceError> {
        let bad = |e: String| ServiceError::BadRequest(format!("sample '{name}': {e}"));
        Ok(Sample {
            name: name.to_string(),
            left: load_pnm(left).map_err(|e| bad(e.to_string()))?.to_gray(),
            right: load_pnm(right).map_err(|e| bad(e.to_string()))?.to_gray(),
            rig: rig
                .map(StereoRig::from_json)
                .transpose()
                .map_err(|e| bad(e.to_string()))?,
        })
    }
}

/// Pairs compiled into the binary.
pub fn bundled() -> Vec<Sample> {
    vec![
        Sample::parse(
            "plane",
            include_bytes!("../samples/plane/left.pgm"),
            include_bytes!("../samples/plane/right.pgm"),
            Some(include_str!("../samples/plane/rig.json")),
        )
        .expect("bundled sample"),
        Sample::parse(
            "stereogram",
            include_bytes!("../samples/stereogram/left.pgm"),
            include_bytes!("../samples/stereogram/right.pgm"),
            None,
        )
        .expect("bundled sample"),
    ]
}

/// Loads every subdirectory of `dir` holding `left.pgm` and `right.pgm`
/// (and optionally `rig.json`), sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<Sample>, ServiceError> {
    let io = |e: std::io::Error| ServiceError::Internal(format!("{}: {e}", dir.display()));
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let (l, r) = (path.join("left.pgm"), path.join("right.pgm"));
        if !l.is_file() || !r.is_file() {
            continue;
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let rig_path = path.join("rig.json");
        let rig = rig_path
            .is_file()
            .then(|| std::fs::read_to_string(&rig_path))
            .transpose()
            .map_err(io)?;
        let left = std::fs::read(&l).map_err(io)?;
        let right = std::fs::read(&r).map_err(io)?;
        out.push(Sample::parse(&name, &left, &right, rig.as_deref())?);
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
