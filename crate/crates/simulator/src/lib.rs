//! In-memory stand-in for a building's device APIs.
//!
//! Device endpoints (`PUT /api/airconditioner`, `PUT /api/light`,
//! `PUT /api/elevator`) mutate a [`BuildingState`]. Every request under
//! `/api/` is appended to a gapless request log before it is processed, inside
//! the same critical section as the mutation, so the log order is the order
//! in which state changes were applied.
//!
//! Observation endpoints: `GET /state`, `GET /log?since=<seq>`,
//! `POST /reset {"fixture": name}`.

mod state;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use state::{
    parse_elevator_operation, AirconState, BuildingState, ElevatorState, FixtureError, LightState, Power,
    Space,
};

/// Name of the built-in fixture: rooms A305/A306 on floor 3 and a hall.
pub const DEFAULT_FIXTURE: &str = "office_floor";

const BUILTIN_FIXTURES: &[(&str, &str)] = &[
    ("office_floor", include_str!("../fixtures/office_floor.json")),
    ("empty_hall", include_str!("../fixtures/empty_hall.json")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub seq: u64,
    pub method: String,
    pub path: String,
    pub body: String,
    /// Status code the simulator answered with.
    pub status: u16,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("fixture {name:?}: {source}")]
    Fixture {
        name: String,
        #[source]
        source: FixtureError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Outcome of one device request: status code plus JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceResponse {
    pub status: u16,
    pub body: serde_json::Value,
}

impl DeviceResponse {
    fn ok() -> Self {
        Self {
            status: 200,
            body: json!({ "ok": true }),
        }
    }

    fn err(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "ok": false, "error": message.into() }),
        }
    }
}

#[derive(Debug)]
struct Inner {
    state: BuildingState,
    log: Vec<RequestLogEntry>,
    fixtures: BTreeMap<String, BuildingState>,
}

/// Shared handle to one simulated building. Clones share state.
#[derive(Debug, Clone)]
pub struct Simulator {
    inner: Arc<Mutex<Inner>>,
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator {
    /// A simulator loaded with the built-in fixtures, starting from
    /// [`DEFAULT_FIXTURE`].
    pub fn new() -> Self {
        let fixtures: BTreeMap<String, BuildingState> = BUILTIN_FIXTURES
            .iter()
            .map(|(name, text)| {
                let state = BuildingState::from_json(text).expect("built-in fixture is valid");
                (name.to_string(), state)
            })
            .collect();
        let state = fixtures[DEFAULT_FIXTURE].clone();
        Self {
            inner: Arc::new(Mutex::new(Inner {
                state,
                log: Vec::new(),
                fixtures,
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers an extra named fixture.
    pub fn add_fixture(&self, name: impl Into<String>, state: BuildingState) -> Result<(), SimulatorError> {
        let name = name.into();
        state.validate().map_err(|source| SimulatorError::Fixture {
            name: name.clone(),
            source,
        })?;
        self.lock().fixtures.insert(name, state);
        Ok(())
    }

    /// Loads a fixture file, registering it under its file stem.
    pub fn add_fixture_file(&self, path: impl AsRef<Path>) -> Result<String, SimulatorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimulatorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let state = BuildingState::from_json(&text).map_err(|source| SimulatorError::Fixture {
            name: name.clone(),
            source,
        })?;
        self.add_fixture(name.clone(), state)?;
        Ok(name)
    }

    pub fn fixture_names(&self) -> Vec<String> {
        self.lock().fixtures.keys().cloned().collect()
    }

    /// Reloads the named fixture and clears the request log.
    pub fn reset(&self, fixture: &str) -> Result<(), SimulatorError> {
        let mut inner = self.lock();
        let state = inner
            .fixtures
            .get(fixture)
            .cloned()
            .ok_or_else(|| SimulatorError::UnknownFixture(fixture.to_owned()))?;
        inner.state = state;
        inner.log.clear();
        Ok(())
    }

    pub fn state(&self) -> BuildingState {
        self.lock().state.clone()
    }

    /// Log entries with `seq > since`.
    pub fn log_since(&self, since: u64) -> Vec<RequestLogEntry> {
        self.lock()
            .log
            .iter()
            .filter(|e| e.seq > since)
            .cloned()
            .collect()
    }

    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.log_since(0)
    }

    /// Processes one device-API request: logs it, validates it and applies it.
    pub fn handle_device(&self, method: &str, path: &str, body: &str) -> DeviceResponse {
        let mut inner = self.lock();
        let seq = inner.log.last().map_or(0, |e| e.seq) + 1;
        let resp = match (method, path) {
            ("PUT", "/api/airconditioner") => apply_aircon(&mut inner.state, body),
            ("PUT", "/api/light") => apply_light(&mut inner.state, body),
            ("PUT", "/api/elevator") => apply_elevator(&mut inner.state, body),
            (_, "/api/airconditioner" | "/api/light" | "/api/elevator") => {
                DeviceResponse::err(405, format!("{method} not allowed on {path}"))
            }
            _ => DeviceResponse::err(404, format!("no device API at {path}")),
        };
        inner.log.push(RequestLogEntry {
            seq,
            method: method.to_owned(),
            path: path.to_owned(),
            body: body.to_owned(),
            status: resp.status,
            timestamp: Utc::now(),
        });
        resp
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, DeviceResponse> {
    serde_json::from_str(body).map_err(|e| DeviceResponse::err(400, format!("invalid body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AirconCommand {
    ac_id: String,
    #[serde(default)]
    on_off: Option<Power>,
    #[serde(default)]
    setpoint: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LightCommand {
    light_id: String,
    on_off: Power,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElevatorCommand {
    operation: String,
}

fn apply_aircon(state: &mut BuildingState, body: &str) -> DeviceResponse {
    let cmd: AirconCommand = match parse_body(body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    if cmd.on_off.is_none() && cmd.setpoint.is_none() {
        return DeviceResponse::err(400, "expected on_off or setpoint");
    }
    if cmd.setpoint.is_some_and(|s| !s.is_finite()) {
        return DeviceResponse::err(400, "setpoint must be finite");
    }
    let Some(ac) = state.aircons.get_mut(&cmd.ac_id) else {
        return DeviceResponse::err(404, format!("unknown ac_id {:?}", cmd.ac_id));
    };
    if let Some(p) = cmd.on_off {
        ac.power = p;
    }
    if let Some(s) = cmd.setpoint {
        ac.setpoint = Some(s);
    }
    DeviceResponse::ok()
}

fn apply_light(state: &mut BuildingState, body: &str) -> DeviceResponse {
    let cmd: LightCommand = match parse_body(body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let Some(light) = state.lights.get_mut(&cmd.light_id) else {
        return DeviceResponse::err(404, format!("unknown light_id {:?}", cmd.light_id));
    };
    light.power = cmd.on_off;
    DeviceResponse::ok()
}

fn apply_elevator(state: &mut BuildingState, body: &str) -> DeviceResponse {
    let cmd: ElevatorCommand = match parse_body(body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let Some(floor) = parse_elevator_operation(&cmd.operation) else {
        return DeviceResponse::err(
            400,
            format!("operation {:?} is not <floor>f<up|down>", cmd.operation),
        );
    };
    state.elevator.current_floor = floor;
    state.elevator.last_operation = Some(cmd.operation);
    DeviceResponse::ok()
}

#[derive(Deserialize)]
struct LogQuery {
    #[serde(default)]
    since: u64,
}

#[derive(Deserialize)]
struct ResetRequest {
    fixture: String,
}

async fn device_api(State(sim): State<Simulator>, method: Method, uri: Uri, body: Bytes) -> Response {
    let body = match String::from_utf8(body.to_vec()) {
        Ok(b) => b,
        Err(_) => {
            let lossy = String::from_utf8_lossy(&body).into_owned();
            sim.handle_device(method.as_str(), uri.path(), &lossy);
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({"ok": false, "error": "body is not UTF-8"})),
            )
                .into_response();
        }
    };
    let resp = sim.handle_device(method.as_str(), uri.path(), &body);
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(resp.body)).into_response()
}

async fn get_state(State(sim): State<Simulator>) -> Json<BuildingState> {
    Json(sim.state())
}

async fn get_log(State(sim): State<Simulator>, Query(q): Query<LogQuery>) -> Json<Vec<RequestLogEntry>> {
    Json(sim.log_since(q.since))
}

async fn post_reset(State(sim): State<Simulator>, body: Bytes) -> Response {
    let req: ResetRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({"ok": false, "error": e.to_string()})),
            )
                .into_response()
        }
    };
    match sim.reset(&req.fixture) {
        Ok(()) => Json(json!({"ok": true, "fixture": req.fixture})).into_response(),
        Err(e) => (
            StatusCode::NOT_FOUND,
            Json(json!({"ok": false, "error": e.to_string()})),
        )
            .into_response(),
    }
}

pub fn router(sim: Simulator) -> Router {
    Router::new()
        .route("/api/{*rest}", any(device_api))
        .route("/state", get(get_state))
        .route("/log", get(get_log))
        .route("/reset", post(post_reset))
        .with_state(sim)
}

/// Binds `addr` and serves the simulator in a background task.
pub async fn spawn(
    sim: Simulator,
    addr: SocketAddr,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(sim)).await {
            tracing::error!(error = %e, "simulator server stopped");
        }
    });
    Ok((local, handle))
}
