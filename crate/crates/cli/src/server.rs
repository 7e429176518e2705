//! HTTP editing service. Each session owns one field; requests on a session
//! are serialized and rendering runs on the blocking pool.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use objfield::manipulate::ManipulationSpec;
use objfield::nn::Checkpoint;
use objfield::session::{FramePayload, LoadedField, Orbit, Session, SessionOptions};
use objfield::{Camera, Error};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::load_scene;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(AppState::default())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table").len()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::StaleFrame(_) => StatusCode::CONFLICT,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Built-in scene name or an inline scene object.
    pub scene: Option<Value>,
    /// Path of a checkpoint on the server.
    pub checkpoint: Option<String>,
    pub resolution: Option<u32>,
    pub k_coarse: Option<usize>,
    pub k_fine: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub num_objects: usize,
    pub options: SessionOptions,
    pub camera: Camera,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraUpdate {
    pub orbit: Option<Orbit>,
    pub camera: Option<Camera>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PickRequest {
    pub u: u32,
    pub v: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulateRequest {
    pub spec: ManipulationSpec,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(delete_session))
        .route("/session/{id}/frame", get(frame))
        .route("/session/{id}/camera", post(camera))
        .route("/session/{id}/pick", post(pick))
        .route("/session/{id}/manipulate", post(manipulate))
        .route("/session/{id}/undo", post(undo))
        .with_state(state)
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    state
        .sessions
        .read()
        .expect("session table")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
}

/// Runs `f` on the session from the blocking pool.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let s = session(state, id)?;
    tokio::task::spawn_blocking(move || {
        let mut guard = s.lock().map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session poisoned"))?;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(State(state): State<Arc<AppState>>, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let Json(req) = body?;
    let field = match (&req.scene, &req.checkpoint) {
        (Some(Value::String(name)), None) => LoadedField::Oracle(load_scene(name).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?),
        (Some(obj @ Value::Object(_)), None) => {
            let scene = objfield::AnalyticScene::from_json(&obj.to_string())?;
            LoadedField::Oracle(scene)
        }
        (None, Some(path)) => {
            let ckpt = Checkpoint::load(path).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("cannot load {path}: {e}")))?;
            LoadedField::from_checkpoint(ckpt)
        }
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give exactly one of `scene` (name or object) and `checkpoint`")),
    };
    let mut options = SessionOptions::interactive();
    if let Some(r) = req.resolution {
        if !(8..=512).contains(&r) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "resolution must lie in 8..=512"));
        }
        options.resolution = r;
    }
    options.render.k_coarse = req.k_coarse.unwrap_or(options.render.k_coarse).max(1);
    options.render.k_fine = req.k_fine.unwrap_or(options.render.k_fine);
    let session = Session::new(field, options)?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let created = SessionCreated { id: id.clone(), num_objects: session.num_objects(), options, camera: session.camera().clone() };
    state.sessions.write().expect("session table").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.sessions.write().expect("session table").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))),
    }
}

async fn frame(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<FramePayload>> {
    with_session(&state, &id, |s| Ok(Json(s.frame()?))).await
}

async fn camera(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<CameraUpdate>, JsonRejection>,
) -> ApiResult<Json<FramePayload>> {
    let Json(update) = body?;
    with_session(&state, &id, move |s| {
        match (update.orbit, update.camera) {
            (Some(o), None) => s.set_orbit(&o)?,
            (None, Some(c)) => s.set_camera(c),
            _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "give exactly one of `orbit` and `camera`")),
        }
        Ok(Json(s.frame()?))
    })
    .await
}

async fn pick(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PickRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    with_session(&state, &id, move |s| {
        Ok(Json(match s.pick(req.u, req.v)? {
            Some(object) => json!({ "object": object }),
            None => json!({ "object": null, "message": "no object" }),
        }))
    })
    .await
}

async fn manipulate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ManipulateRequest>, JsonRejection>,
) -> ApiResult<Json<FramePayload>> {
    let Json(req) = body?;
    with_session(&state, &id, move |s| Ok(Json(s.apply_and_render(&req.spec)?))).await
}

async fn undo(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<FramePayload>> {
    with_session(&state, &id, |s| {
        if !s.undo() {
            return Err(ApiError::new(StatusCode::CONFLICT, "nothing to undo"));
        }
        Ok(Json(s.frame()?))
    })
    .await
}

pub async fn serve(addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
