//! Local HTTP service backing the browser annotation tool.

use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::annotate::{read_boxes_csv, validate_annotations, ManualAnnotation};
use crate::calibration::ClickObservation;
use crate::formats::{atomic_write, read_file};
use crate::pipeline::{run_template, PipelineError, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Resource {
    Annotations,
    CalibrationClicks,
    Template,
}

struct Sequence {
    session: Session,
    locks: BTreeMap<Resource, Mutex<()>>,
}

/// Shared service state: one session per sequence id.
#[derive(Clone)]
pub struct AppState {
    sequences: Arc<BTreeMap<String, Sequence>>,
}

impl AppState {
    pub fn new(sessions: Vec<Session>) -> Result<Self, PipelineError> {
        let mut sequences = BTreeMap::new();
        for session in sessions {
            let id = session.manifest.sequence_id.clone();
            let locks = [Resource::Annotations, Resource::CalibrationClicks, Resource::Template]
                .into_iter()
                .map(|r| (r, Mutex::new(())))
                .collect();
            if sequences.insert(id.clone(), Sequence { session, locks }).is_some() {
                return Err(PipelineError::Usage(format!("sequence {id} served twice")));
            }
        }
        Ok(Self {
            sequences: Arc::new(sequences),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    module: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            module: "service",
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "SchemaInvalid", message)
    }

    fn busy() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "Conflict",
            "another write to this resource is in progress",
        )
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Format(_) | PipelineError::Manifest(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self {
            status,
            code: e.code().to_string(),
            module: e.module(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "error": { "module": self.module, "code": self.code, "message": self.message }
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sequences", get(list_sequences))
        .route("/sequences/{id}/frames/{camera}/{n}", get(get_frame))
        .route("/sequences/{id}/crops/{individual}/{camera}/{n}", get(get_crop))
        .route("/annotations/{id}", get(get_annotations).put(put_annotations))
        .route("/calibration-clicks/{id}", get(get_clicks).put(put_clicks))
        .route("/template/{id}/build", post(build_template))
        .with_state(state)
}

/// Serves `sessions` on `127.0.0.1:port` until interrupted.
pub async fn serve(sessions: Vec<Session>, port: u16) -> Result<(), PipelineError> {
    let app = router(AppState::new(sessions)?);
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| PipelineError::Usage(format!("cannot bind {addr}: {e}")))?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| PipelineError::Usage(format!("server error: {e}")))
}

fn sequence<'a>(state: &'a AppState, id: &str) -> ApiResult<&'a Sequence> {
    state
        .sequences
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown sequence {id}")))
}

#[derive(Serialize)]
struct SequenceInfo {
    sequence_id: String,
    video_frames: [i64; 2],
    cameras: Vec<String>,
    individuals: Vec<String>,
}

async fn list_sequences(State(state): State<AppState>) -> Json<Vec<SequenceInfo>> {
    let infos = state
        .sequences
        .values()
        .map(|s| {
            let m = &s.session.manifest;
            SequenceInfo {
                sequence_id: m.sequence_id.clone(),
                video_frames: m.video_frames,
                cameras: m.cameras.iter().map(|c| c.id.clone()).collect(),
                individuals: m.individuals.iter().map(|i| i.individual_id.clone()).collect(),
            }
        })
        .collect();
    Json(infos)
}

fn frame_file(seq: &Sequence, camera: &str, n: i64) -> ApiResult<PathBuf> {
    if seq.session.camera_entry(camera).is_none() {
        return Err(ApiError::not_found(format!("unknown camera {camera}")));
    }
    seq.session
        .frame_path(camera, n)
        .ok_or_else(|| ApiError::not_found(format!("no frame {n} for camera {camera}")))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/jpeg",
    }
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, camera, n)): Path<(String, String, i64)>,
) -> ApiResult<Response> {
    let seq = sequence(&state, &id)?;
    let path = frame_file(seq, &camera, n)?;
    let bytes = read_file(&path).map_err(PipelineError::from)?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

/// PNG of the individual's box in one view, clipped to the image. The `X-Crop-Origin`
/// header holds the crop's top-left pixel as `x,y` so clicks map back to full-frame pixels.
async fn get_crop(
    State(state): State<AppState>,
    Path((id, individual, camera, n)): Path<(String, String, String, i64)>,
) -> ApiResult<Response> {
    let seq = sequence(&state, &id)?;
    if !seq
        .session
        .manifest
        .individuals
        .iter()
        .any(|i| i.individual_id == individual)
    {
        return Err(ApiError::not_found(format!("unknown individual {individual}")));
    }
    let path = frame_file(seq, &camera, n)?;
    let boxes_path = seq.session.out("boxes.csv");
    if !boxes_path.exists() {
        return Err(ApiError::not_found("no boxes yet; run propagate first"));
    }
    let rows =
        read_boxes_csv(&read_file(&boxes_path).map_err(PipelineError::from)?[..]).map_err(PipelineError::from)?;
    let b = rows
        .iter()
        .find(|r| r.frame == n && r.individual == individual && r.camera == camera)
        .ok_or_else(|| ApiError::not_found(format!("no box for {individual} in {camera} frame {n}")))?;
    let bytes = read_file(&path).map_err(PipelineError::from)?;
    let png = tokio::task::spawn_blocking({
        let (x0, y0, x1, y1) = (b.x_min, b.y_min, b.x_max, b.y_max);
        move || crop_png(&bytes, x0, y0, x1, y1)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let (png, (x, y)) = png;
    let origin = HeaderValue::from_str(&format!("{x},{y}")).expect("ascii header");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::HeaderName::from_static("x-crop-origin"), origin),
        ],
        png,
    )
        .into_response())
}

fn crop_png(bytes: &[u8], x0: f64, y0: f64, x1: f64, y1: f64) -> ApiResult<(Vec<u8>, (u32, u32))> {
    let internal =
        |e: image::ImageError| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ImageDecode", e.to_string());
    let img = image::load_from_memory(bytes).map_err(internal)?;
    let (w, h) = (img.width(), img.height());
    let clamp = |v: f64, hi: u32| (v.max(0.0).min(hi as f64)) as u32;
    let (ax, ay) = (clamp(x0.floor(), w), clamp(y0.floor(), h));
    let (bx, by) = (clamp(x1.ceil(), w), clamp(y1.ceil(), h));
    if bx <= ax || by <= ay {
        return Err(ApiError::not_found("box lies outside the image"));
    }
    let crop = img.crop_imm(ax, ay, bx - ax, by - ay);
    let mut out = Vec::new();
    crop.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(internal)?;
    Ok((out, (ax, ay)))
}

fn json_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

/// Stored document bytes, or `[]` when nothing has been saved yet.
fn stored(path: &std::path::Path) -> ApiResult<Response> {
    if !path.exists() {
        return Ok(json_response(b"[]".to_vec()));
    }
    Ok(json_response(read_file(path).map_err(PipelineError::from)?))
}

async fn get_annotations(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let seq = sequence(&state, &id)?;
    stored(&seq.session.resolve(&seq.session.manifest.annotations))
}

async fn get_clicks(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let seq = sequence(&state, &id)?;
    stored(&seq.session.resolve(&seq.session.manifest.calibration_clicks))
}

fn check_annotations(session: &Session, body: &[u8]) -> ApiResult<()> {
    let anns: Vec<ManualAnnotation> =
        serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("annotation set: {e}")))?;
    validate_annotations(&anns).map_err(|e| ApiError::invalid(e.to_string()))?;
    let cameras: HashSet<&str> = session.manifest.cameras.iter().map(|c| c.id.as_str()).collect();
    let individuals: HashSet<&str> = session
        .manifest
        .individuals
        .iter()
        .map(|i| i.individual_id.as_str())
        .collect();
    for a in &anns {
        if !cameras.contains(a.camera_id.as_str()) {
            return Err(ApiError::invalid(format!("unknown camera {}", a.camera_id)));
        }
        if !individuals.contains(a.individual_id.as_str()) {
            return Err(ApiError::invalid(format!("unknown individual {}", a.individual_id)));
        }
    }
    Ok(())
}

fn check_clicks(session: &Session, body: &[u8]) -> ApiResult<()> {
    let obs: Vec<ClickObservation> =
        serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("calibration clicks: {e}")))?;
    let mut seen = HashSet::new();
    for o in &obs {
        if session.camera_entry(&o.camera_id).is_none() {
            return Err(ApiError::invalid(format!("unknown camera {}", o.camera_id)));
        }
        for c in &o.clicks {
            if !(c.u.is_finite() && c.v.is_finite()) {
                return Err(ApiError::invalid(format!("non-finite click on {}", c.marker_id)));
            }
            if !seen.insert((o.camera_id.as_str(), o.video_frame, c.marker_id.as_str())) {
                return Err(ApiError::invalid(format!(
                    "marker {} clicked twice in {} frame {}",
                    c.marker_id, o.camera_id, o.video_frame
                )));
            }
        }
    }
    Ok(())
}

async fn put_document(
    state: &AppState,
    id: &str,
    resource: Resource,
    body: Bytes,
    check: fn(&Session, &[u8]) -> ApiResult<()>,
) -> ApiResult<StatusCode> {
    let seq = sequence(state, id)?;
    check(&seq.session, &body)?;
    let _guard = seq.locks[&resource].try_lock().map_err(|_| ApiError::busy())?;
    let m = &seq.session.manifest;
    let path = seq.session.resolve(match resource {
        Resource::Annotations => &m.annotations,
        _ => &m.calibration_clicks,
    });
    tokio::task::spawn_blocking(move || atomic_write(&path, &body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(PipelineError::from)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn put_annotations(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    put_document(&state, &id, Resource::Annotations, body, check_annotations).await
}

async fn put_clicks(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    put_document(&state, &id, Resource::CalibrationClicks, body, check_clicks).await
}

/// Runs the same template build as the `template` subcommand and returns its report.
async fn build_template(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let seq = sequence(&state, &id)?;
    let _guard = seq.locks[&Resource::Template]
        .try_lock()
        .map_err(|_| ApiError::busy())?;
    let session = seq.session.clone();
    let build = tokio::task::spawn_blocking(move || run_template(&session))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    Ok(Json(build).into_response())
}
