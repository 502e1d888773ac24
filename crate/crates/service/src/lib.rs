//! HTTP/WebSocket backend for interactive matcher tuning.
//!
//! Each session holds a stereo pair and recomputes its disparity map in the
//! background whenever the parameters change. Frames are pushed to
//! WebSocket subscribers; ROI queries read the latest frame.

mod samples;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use stereo_core::calib::rectify_pair;
use stereo_core::image::{load_pnm, save_pfm};
use stereo_core::{ParamError, Roi, SgmParams, SgmParamsPatch, StereoRig};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

pub use samples::{bundled as bundled_samples, load_dir as load_sample_dir, Sample, SampleInfo};
pub use session::{Frame, FrameEvent, RoiStats, Session};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("unknown session '{0}'")]
    NotFound(String),
    #[error("no disparity frame has been computed yet")]
    NoFrame,
    #[error("{0}")]
    Internal(String),
}

impl From<stereo_core::ImageError> for ServiceError {
    fn from(e: stereo_core::ImageError) -> Self {
        ServiceError::BadRequest(e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Params(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NoFrame => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    /// Replaces the bundled sample pairs.
    pub samples_dir: Option<PathBuf>,
    /// Static files served at `/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    samples: Vec<Sample>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(samples: Vec<Sample>) -> Arc<AppState> {
        Arc::new(AppState {
            samples,
            ..Default::default()
        })
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn insert(
        &self,
        left: stereo_core::ImageU8,
        right: stereo_core::ImageU8,
        rig: Option<StereoRig>,
        params: SgmParams,
    ) -> Result<Arc<Session>, ServiceError> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let nonce = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        let id = format!("s{n}-{nonce:08x}");
        let session = Session::create(id.clone(), left, right, rig, params)?;
        self.sessions.write().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/samples", get(list_samples))
        .route("/api/session", post(create_session))
        .route("/api/session/sample", post(create_sample_session))
        .route("/api/session/{id}/params", get(get_params).patch(patch_params))
        .route("/api/session/{id}/roi", post(query_roi))
        .route("/api/session/{id}/disparity.pfm", get(disparity_pfm))
        .route("/api/session/{id}/stream", get(stream))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, config: Config) -> std::io::Result<()> {
    let samples = match &config.samples_dir {
        Some(dir) => load_sample_dir(dir).map_err(|e| std::io::Error::other(e.to_string()))?,
        None => bundled_samples(),
    };
    let mut app = router(AppState::new(samples));
    if let Some(ui) = &config.ui_dir {
        app = app.fallback_service(tower_http::services::ServeDir::new(ui));
    }
    axum::serve(listener, app).await
}

/// Binds `addr` and serves.
pub async fn run(addr: SocketAddr, config: Config) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve(listener, config).await
}

/// Accepts either a full versioned parameter file or a patch over the defaults.
fn parse_params(text: &str) -> Result<SgmParams, ParamError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ParamError::Format(e.to_string()))?;
    if value.get("version").is_some() {
        SgmParams::from_json(text)
    } else {
        let patch: SgmParamsPatch = serde_json::from_value(value).map_err(|e| ParamError::Format(e.to_string()))?;
        SgmParams::default().apply(&patch)
    }
}

fn session_body(s: &Session) -> serde_json::Value {
    let (params, generation) = s.params();
    json!({
        "id": s.id,
        "width": s.left.width(),
        "height": s.left.height(),
        "has_rig": s.rig.is_some(),
        "params": params,
        "generation": generation,
    })
}

async fn list_samples(State(state): State<Arc<AppState>>) -> Json<Vec<SampleInfo>> {
    Json(state.samples.iter().map(Sample::info).collect())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let bad = |e: String| ServiceError::BadRequest(e);
    let (mut left, mut right, mut rig, mut params) = (None, None, None, SgmParams::default());
    let mut rectified = true;
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| bad(e.to_string()))?;
        let text = || String::from_utf8(data.to_vec()).map_err(|_| bad(format!("field '{name}' is not UTF-8")));
        match name.as_str() {
            "left" => left = Some(load_pnm(&data)?.to_gray()),
            "right" => right = Some(load_pnm(&data)?.to_gray()),
            "rig" => rig = Some(StereoRig::from_json(&text()?).map_err(|e| bad(e.to_string()))?),
            "params" => params = parse_params(&text()?)?,
            "rectified" => rectified = text()?.trim() != "false",
            other => return Err(bad(format!("unexpected field '{other}'"))),
        }
    }
    let left = left.ok_or_else(|| bad("missing field 'left'".into()))?;
    let right = right.ok_or_else(|| bad("missing field 'right'".into()))?;
    let (left, right) = match (&rig, rectified) {
        (Some(rig), false) => rectify_pair(rig, &left, &right).map_err(|e| bad(e.to_string()))?,
        (None, false) => return Err(bad("raw images need a rig to rectify".into())),
        _ => (left, right),
    };
    let session = state.insert(left, right, rig, params)?;
    Ok(Json(session_body(&session)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    name: String,
    #[serde(default)]
    params: Option<SgmParamsPatch>,
}

async fn create_sample_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let req: SampleRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let sample = state
        .samples
        .iter()
        .find(|s| s.name == req.name)
        .ok_or_else(|| ServiceError::BadRequest(format!("unknown sample '{}'", req.name)))?;
    let params = SgmParams::default().apply(&req.params.unwrap_or_default())?;
    let session = state.insert(sample.left.clone(), sample.right.clone(), sample.rig.clone(), params)?;
    Ok(Json(session_body(&session)))
}

async fn get_params(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let (params, generation) = state.session(&id)?.params();
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        [("x-generation", generation.to_string())],
        params.to_json(),
    )
        .into_response())
}

async fn patch_params(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let session = state.session(&id)?;
    let patch: SgmParamsPatch = serde_json::from_slice(&body).map_err(|e| ParamError::Format(e.to_string()))?;
    let (params, generation) = session.update(&patch)?;
    Ok(Json(json!({ "accepted": true, "params": params, "generation": generation })))
}

async fn query_roi(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RoiStats>, ServiceError> {
    let session = state.session(&id)?;
    let roi: Roi = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    Ok(Json(session.roi(&roi)?))
}

async fn disparity_pfm(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let frame = state.session(&id)?.latest().ok_or(ServiceError::NoFrame)?;
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream")],
        [("x-generation", frame.generation.to_string())],
        save_pfm(&frame.disparity),
    )
        .into_response())
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default)]
    raw: Option<u8>,
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let session = state.session(&id);
    let raw = q.raw.unwrap_or(0) != 0;
    ws.on_upgrade(move |socket| async move {
        match session {
            Ok(s) => stream_frames(socket, s, raw).await,
            Err(e) => {
                let mut socket = socket;
                let msg = json!({ "type": "error", "message": e.to_string() }).to_string();
                let _ = socket.send(Message::Text(msg.into())).await;
                let _ = socket.send(Message::Close(None)).await;
            }
        }
    })
}

async fn send_frame(socket: &mut WebSocket, frame: &Frame, raw: bool) -> bool {
    let text = serde_json::to_string(&frame.event(raw)).expect("frame serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

/// Sends the latest frame, then every newer frame in generation order.
/// A subscriber that falls behind skips ahead to the latest frame.
async fn stream_frames(mut socket: WebSocket, session: Arc<Session>, raw: bool) {
    let mut rx = session.subscribe();
    let mut sent = 0u64;
    if let Some(f) = session.latest() {
        if !send_frame(&mut socket, &f, raw).await {
            return;
        }
        sent = f.generation;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => {
                let frame = match msg {
                    Ok(f) => f,
                    Err(RecvError::Lagged(_)) => match session.latest() {
                        Some(f) => f,
                        None => continue,
                    },
                    Err(RecvError::Closed) => return,
                };
                if frame.generation <= sent {
                    continue;
                }
                if !send_frame(&mut socket, &frame, raw).await {
                    return;
                }
                sent = frame.generation;
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
