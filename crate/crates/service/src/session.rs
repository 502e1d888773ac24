use std::sync::{Arc, Mutex};
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;
use stereo_core::depth::{reproject_pixel, roi_disparity, RoiStatistic};
use stereo_core::image::{pseudocolor, save_pfm, save_pnm};
use stereo_core::sgm::compute_disparity;
use stereo_core::{DepthError, DisparityMap, ImageU8, ParamError, Roi, SgmParams, SgmParamsPatch, StereoRig};
use tokio::sync::{broadcast, watch, Notify};

use crate::ServiceError;

/// A published disparity result. Immutable once created.
#[derive(Debug)]
pub struct Frame {
    pub generation: u64,
    pub params: SgmParams,
    pub compute_ms: f64,
    pub disparity: DisparityMap,
    /// Pseudocolored disparity as binary PPM.
    pub preview_ppm: Vec<u8>,
}

impl Frame {
    pub fn event(&self, raw: bool) -> FrameEvent<'_> {
        FrameEvent {
            kind: "frame",
            generation: self.generation,
            params: &self.params,
            compute_ms: self.compute_ms,
            width: self.disparity.width(),
            height: self.disparity.height(),
            image_b64: B64.encode(&self.preview_ppm),
            pfm_b64: raw.then(|| B64.encode(save_pfm(&self.disparity))),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FrameEvent<'a> {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub generation: u64,
    pub params: &'a SgmParams,
    pub compute_ms: f64,
    pub width: usize,
    pub height: usize,
    pub image_b64: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pfm_b64: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoiStats {
    pub generation: u64,
    pub mean_disparity: Option<f64>,
    pub valid_fraction: f64,
    pub distance_m: Option<f64>,
}

struct Control {
    params: SgmParams,
    generation: u64,
    pending: Option<(u64, SgmParams)>,
}

/// One loaded image pair with its matcher state.
///
/// Parameter updates bump the generation and overwrite a single pending
/// slot; the worker always computes the newest pending request, so rapid
/// updates coalesce.
pub struct Session {
    pub id: String,
    pub left: Arc<ImageU8>,
    pub right: Arc<ImageU8>,
    pub rig: Option<StereoRig>,
    control: Mutex<Control>,
    wake: Arc<Notify>,
    latest: watch::Sender<Option<Arc<Frame>>>,
    frames: broadcast::Sender<Arc<Frame>>,
    computes: std::sync::atomic::AtomicU64,
}

impl Session {
    pub fn create(
        id: String,
        left: ImageU8,
        right: ImageU8,
        rig: Option<StereoRig>,
        params: SgmParams,
    ) -> Result<Arc<Session>, ServiceError> {
        params.validate()?;
        left.require_gray()?;
        right.require_gray()?;
        if (left.width(), left.height()) != (right.width(), right.height()) {
            return Err(ServiceError::BadRequest(format!(
                "image sizes differ: left {}x{}, right {}x{}",
                left.width(),
                left.height(),
                right.width(),
                right.height()
            )));
        }
        let (latest, _) = watch::channel(None);
        let (frames, _) = broadcast::channel(16);
        let session = Arc::new(Session {
            id,
            left: Arc::new(left),
            right: Arc::new(right),
            rig,
            control: Mutex::new(Control {
                params,
                generation: 1,
                pending: Some((1, params)),
            }),
            wake: Arc::new(Notify::new()),
            latest,
            frames,
            computes: Default::default(),
        });
        tokio::spawn(worker(Arc::downgrade(&session), session.wake.clone()));
        session.wake.notify_one();
        Ok(session)
    }

    pub fn params(&self) -> (SgmParams, u64) {
        let c = self.control.lock().expect("control lock");
        (c.params, c.generation)
    }

    /// Validates and applies a partial update. On failure nothing changes.
    pub fn update(&self, patch: &SgmParamsPatch) -> Result<(SgmParams, u64), ParamError> {
        let mut c = self.control.lock().expect("control lock");
        let next = c.params.apply(patch)?;
        c.params = next;
        c.generation += 1;
        c.pending = Some((c.generation, next));
        let out = (next, c.generation);
        drop(c);
        self.wake.notify_one();
        Ok(out)
    }

    pub fn latest(&self) -> Option<Arc<Frame>> {
        self.latest.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Frame>> {
        self.frames.subscribe()
    }

    pub fn watch_latest(&self) -> watch::Receiver<Option<Arc<Frame>>> {
        self.latest.subscribe()
    }

    /// Number of disparity computations run so far.
    pub fn compute_count(&self) -> u64 {
        self.computes.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn roi(&self, roi: &Roi) -> Result<RoiStats, ServiceError> {
        let frame = self.latest().ok_or(ServiceError::NoFrame)?;
        let stats = roi_disparity(&frame.disparity, roi, RoiStatistic::Mean).map_err(|e| match e {
            DepthError::EmptyRoi | DepthError::RoiOutside { .. } => ServiceError::BadRequest(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        })?;
        let mean = stats.has_valid_pixels().then_some(stats.value);
        let distance_m = match (&self.rig, mean) {
            (Some(rig), Some(d)) => {
                let (cx, cy) = roi.center();
                reproject_pixel(rig, cx, cy, d).map(|p| p.z)
            }
            _ => None,
        };
        Ok(RoiStats {
            generation: frame.generation,
            mean_disparity: mean,
            valid_fraction: stats.valid as f64 / stats.total as f64,
            distance_m,
        })
    }

    fn take_pending(&self) -> Option<(u64, SgmParams)> {
        self.control.lock().expect("control lock").pending.take()
    }
}

async fn worker(session: std::sync::Weak<Session>, wake: Arc<Notify>) {
    loop {
        let Some(s) = session.upgrade() else { return };
        let Some((generation, params)) = s.take_pending() else {
            drop(s);
            // wake periodically so a dropped session ends its worker
            let _ = tokio::time::timeout(std::time::Duration::from_secs(5), wake.notified()).await;
            continue;
        };
        let (left, right) = (s.left.clone(), s.right.clone());
        drop(s);
        let result = tokio::task::spawn_blocking(move || {
            let t0 = Instant::now();
            let d = compute_disparity(&left, &right, &params);
            (d, t0.elapsed().as_secs_f64() * 1e3)
        })
        .await;
        let Some(s) = session.upgrade() else { return };
        s.computes.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let Ok((Ok(disparity), compute_ms)) = result else {
            continue;
        };
        let lo = params.min_disparity as f32;
        let hi = params.max_disparity() as f32;
        let preview_ppm = pseudocolor(&disparity, lo, hi).map(|img| save_pnm(&img)).unwrap_or_default();
        let frame = Arc::new(Frame {
            generation,
            params,
            compute_ms,
            disparity,
            preview_ppm,
        });
        s.latest.send_replace(Some(frame.clone()));
        let _ = s.frames.send(frame);
    }
}
