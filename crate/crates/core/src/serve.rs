//! Teleoperation service for recording human demonstrations.
//!
//! Endpoints (all JSON):
//!
//! | method | path | result |
//! |---|---|---|
//! | GET  | `/api/session/new` | `{session_id, state}` for the next episode |
//! | GET  | `/api/session/{id}/state` | render payload |
//! | POST | `/api/session/{id}/action` | body `{"action": "<name>"}`; new render payload |
//! | POST | `/api/session/{id}/commit` | replay-validates and stores the trajectory |
//! | POST | `/api/session/{id}/discard` | drops the session without writing anything |
//! | GET  | `/api/session/{id}/events` | server-sent events, one render payload per update |
//! | GET  | `/api/trajectories` | ids of committed trajectories |
//!
//! Render payloads show only what the agent has seen: unexplored cells are
//! `?`, and room types are never included.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::artifact::write_file;
use crate::demo::{replay, trajectory_to_jsonl, validate_trajectory, DemoSource};
use crate::episodes::Episode;
use crate::geom::Cell;
use crate::nav::Known;
use crate::sim::{self, Action, EpisodeState, EpisodeStatus, Observation, SimConfig};
use crate::world::Scene;

pub struct ServiceConfig {
    pub scenes: BTreeMap<String, Arc<Scene>>,
    pub episodes: Vec<Episode>,
    /// Committed trajectories go to `<demo_dir>/human/`.
    pub demo_dir: PathBuf,
    pub manifest_hash: Option<String>,
    pub sim: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosePayload {
    pub x: i32,
    pub y: i32,
    pub heading: u8,
    pub pitch: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisiblePayload {
    pub category: String,
    pub bearing_deg: f64,
    pub distance_cells: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPayload {
    pub width: usize,
    pub height: usize,
    /// One string per row: `?` unexplored, `#` wall, `.` floor.
    pub rows: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub session_id: String,
    pub episode_id: String,
    pub target_category: String,
    pub step_count: u32,
    pub status: EpisodeStatus,
    pub pose: PosePayload,
    pub visible_objects: Vec<VisiblePayload>,
    pub grid: GridPayload,
    pub committed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub session_id: String,
    pub state: StatePayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitResult {
    pub trajectory_id: String,
    pub path: String,
    pub outcome: EpisodeStatus,
    pub steps: usize,
}

#[derive(Deserialize)]
struct ActionBody {
    action: String,
}

struct Session {
    id: String,
    episode: Episode,
    state: EpisodeState,
    observation: Observation,
    actions: Vec<Action>,
    known: BTreeMap<Cell, Known>,
    committed: bool,
    events: broadcast::Sender<StatePayload>,
}

impl Session {
    fn absorb(&mut self) {
        for &c in &self.observation.seen_floor {
            self.known.insert(c, Known::Floor);
        }
        for &c in &self.observation.seen_walls {
            self.known.entry(c).or_insert(Known::Wall);
        }
        self.known.insert(self.state.pose.position, Known::Floor);
    }

    fn payload(&self) -> StatePayload {
        let size = self.state.scene.size;
        let rows = (0..size.height as i32)
            .map(|y| {
                (0..size.width as i32)
                    .map(|x| match self.known.get(&Cell::new(x, y)) {
                        Some(Known::Floor) => '.',
                        Some(Known::Wall) => '#',
                        None => '?',
                    })
                    .collect()
            })
            .collect();
        let p = self.state.pose;
        StatePayload {
            session_id: self.id.clone(),
            episode_id: self.episode.episode_id.clone(),
            target_category: self.episode.target_category.clone(),
            step_count: self.state.steps_taken,
            status: self.state.status,
            pose: PosePayload {
                x: p.position.x,
                y: p.position.y,
                heading: p.heading,
                pitch: p.pitch,
            },
            visible_objects: self
                .observation
                .visible_objects
                .iter()
                .map(|o| VisiblePayload {
                    category: o.category.clone(),
                    bearing_deg: o.bearing_deg,
                    distance_cells: o.distance_cells,
                })
                .collect(),
            grid: GridPayload {
                width: size.width,
                height: size.height,
                rows,
            },
            committed: self.committed,
        }
    }
}

struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    counter: AtomicU64,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({"error": self.1}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl AppState {
    fn session(&self, id: &str) -> std::result::Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}

async fn new_session(State(app): State<Arc<AppState>>) -> ApiResult<NewSession> {
    let n = app.counter.fetch_add(1, Ordering::SeqCst);
    if app.config.episodes.is_empty() {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no episodes loaded".into()));
    }
    let episode = app.config.episodes[(n as usize) % app.config.episodes.len()].clone();
    let scene = app
        .config
        .scenes
        .get(&episode.scene_id)
        .cloned()
        .ok_or_else(|| internal(format!("episode {} names unknown scene", episode.episode_id)))?;
    let state = sim::reset(scene, &episode, app.config.sim).map_err(internal)?;
    let observation = state.observe();
    let id = format!("session-{n:05}");
    let (events, _) = broadcast::channel(64);
    let mut session = Session {
        id: id.clone(),
        episode,
        state,
        observation,
        actions: Vec::new(),
        known: BTreeMap::new(),
        committed: false,
        events,
    };
    session.absorb();
    let payload = session.payload();
    app.sessions
        .lock()
        .expect("session map lock")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok(Json(NewSession {
        session_id: id,
        state: payload,
    }))
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatePayload> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    Ok(Json(s.payload()))
}

async fn post_action(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatePayload> {
    let session = app.session(&id)?;
    let parsed: ActionBody = serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let action: Action = parsed
        .action
        .parse()
        .map_err(|_| ApiError(StatusCode::BAD_REQUEST, format!("unknown action `{}`", parsed.action)))?;
    let mut s = session.lock().await;
    if s.state.status.is_terminal() {
        return Err(ApiError(StatusCode::CONFLICT, format!("episode already ended with {:?}", s.state.status)));
    }
    let (next, obs) = sim::step(&s.state, action).map_err(|e| ApiError(StatusCode::CONFLICT, e.to_string()))?;
    s.state = next;
    s.observation = obs;
    s.actions.push(action);
    s.absorb();
    let payload = s.payload();
    let _ = s.events.send(payload.clone());
    Ok(Json(payload))
}

async fn commit(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<CommitResult> {
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    if s.committed {
        return Err(ApiError(StatusCode::CONFLICT, "session already committed".into()));
    }
    if !s.state.status.is_terminal() {
        return Err(ApiError(StatusCode::CONFLICT, "episode is still running".into()));
    }
    let scene = s.state.scene.clone();
    let trajectory = replay(scene.clone(), &s.episode, &s.actions, DemoSource::Human, app.config.sim).map_err(internal)?;
    validate_trajectory(scene, &trajectory, app.config.sim).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    if trajectory.outcome != s.state.status {
        return Err(internal("replay disagrees with the live session"));
    }
    let trajectory_id = format!("{}-{}", s.episode.episode_id, s.id);
    let path = app.config.demo_dir.join("human").join(format!("{trajectory_id}.jsonl"));
    let bytes = trajectory_to_jsonl(&trajectory, app.config.manifest_hash.as_deref()).map_err(internal)?;
    write_file(&path, &bytes).map_err(internal)?;
    s.committed = true;
    let _ = s.events.send(s.payload());
    Ok(Json(CommitResult {
        trajectory_id,
        path: path.display().to_string(),
        outcome: trajectory.outcome,
        steps: trajectory.steps.len(),
    }))
}

async fn discard(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let removed = app.sessions.lock().expect("session map lock").remove(&id);
    match removed {
        Some(_) => Ok(Json(serde_json::json!({"discarded": id}))),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))),
    }
}

async fn trajectories(State(app): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let dir = app.config.demo_dir.join("human");
    let mut ids = Vec::new();
    if dir.exists() {
        for entry in std::fs::read_dir(&dir).map_err(internal)? {
            let p = entry.map_err(internal)?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = p.file_stem() {
                    ids.push(stem.to_string_lossy().into_owned());
                }
            }
        }
    }
    ids.sort();
    Ok(Json(serde_json::json!({"trajectories": ids})))
}

async fn events(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> std::result::Result<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>, ApiError> {
    let session = app.session(&id)?;
    let (first, rx) = {
        let s = session.lock().await;
        (s.payload(), s.events.subscribe())
    };
    let to_event = |p: &StatePayload| Event::default().event("state").json_data(p).expect("payload serializes");
    let stream = futures::stream::unfold((Some(first), rx), move |(pending, mut rx)| async move {
        if let Some(p) = pending {
            return Some((Ok(to_event(&p)), (None, rx)));
        }
        loop {
            match rx.recv().await {
                Ok(p) => return Some((Ok(to_event(&p)), (None, rx))),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        config,
        sessions: Mutex::new(HashMap::new()),
        counter: AtomicU64::new(0),
    });
    Router::new()
        .route("/api/session/new", get(new_session))
        .route("/api/session/{id}/state", get(get_state))
        .route("/api/session/{id}/action", post(post_action))
        .route("/api/session/{id}/commit", post(commit))
        .route("/api/session/{id}/discard", post(discard))
        .route("/api/session/{id}/events", get(events))
        .route("/api/trajectories", get(trajectories))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}
