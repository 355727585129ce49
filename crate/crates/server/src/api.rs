//! Operator HTTP and WebSocket API.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;
use tracing::{debug, warn};
use uuid::Uuid;

use sentinel_core::messages::Command;

use crate::auth::AuthError;
use crate::state::{AppState, Notification, RouteError};
use crate::store::{is_clip_id, EventKind};

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn unauthorized() -> ApiError {
    ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid token")
}

/// The authenticated operator, from `Authorization: Bearer` or `?token=`.
pub struct User(pub String);

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

impl FromRequestParts<Arc<AppState>> for User {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_string);
        let token = match header_token {
            Some(t) => t,
            None => Query::<TokenQuery>::try_from_uri(&parts.uri)
                .ok()
                .and_then(|q| q.0.token)
                .ok_or_else(unauthorized)?,
        };
        state.auth.authenticate(token.trim()).map(User).ok_or_else(unauthorized)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Credentials {
    username: String,
    password: String,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("bad request body: {e}")))
}

async fn register(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let c: Credentials = parse_json(&body)?;
    let account = tokio::task::spawn_blocking(move || state.auth.register(&c.username, &c.password))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match account {
        Ok(a) => Ok((StatusCode::CREATED, Json(json!({ "username": a.username })))),
        Err(AuthError::Duplicate) => Err(ApiError::new(StatusCode::CONFLICT, "username already taken")),
        Err(AuthError::Invalid(m)) => Err(ApiError::new(StatusCode::BAD_REQUEST, m)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn login(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let c: Credentials = parse_json(&body)?;
    let result = tokio::task::spawn_blocking(move || state.auth.login(&c.username, &c.password))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok((token, expires_at_ms)) => Ok(Json(json!({ "token": token, "expires_at_ms": expires_at_ms }))),
        Err(AuthError::BadCredentials) => Err(ApiError::new(StatusCode::UNAUTHORIZED, "invalid username or password")),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn list_robots(State(state): State<Arc<AppState>>, _user: User) -> impl IntoResponse {
    Json(state.robots())
}

fn robot_id(raw: &str, state: &AppState) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw)
        .ok()
        .filter(|id| state.knows_robot(*id))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown robot"))
}

async fn post_command(
    State(state): State<Arc<AppState>>,
    User(user): User,
    Path(raw_id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let id = robot_id(&raw_id, &state)?;
    let cmd = parse_command(&body)?;
    match state.route_command(&user, id, &cmd) {
        Ok(()) => Ok((StatusCode::ACCEPTED, Json(json!({ "command_id": cmd.command_id })))),
        Err(RouteError::UnknownRobot) => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown robot")),
        Err(RouteError::Offline) => Err(ApiError::new(StatusCode::CONFLICT, "robot is offline")),
        Err(RouteError::Busy) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "robot command queue full")),
    }
}

/// A command body; `command_id` is generated when the client omits it.
fn parse_command(body: &[u8]) -> Result<Command, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    let mut value: serde_json::Value = serde_json::from_slice(body).map_err(|e| bad(format!("invalid json: {e}")))?;
    let obj = value.as_object_mut().ok_or_else(|| bad("command must be a JSON object".into()))?;
    obj.entry("command_id").or_insert_with(|| json!(Uuid::new_v4()));
    Command::parse(&serde_json::to_vec(&value).expect("value serializes")).map_err(|e| bad(e.to_string()))
}

#[derive(Deserialize)]
struct EventsQuery {
    kind: Option<String>,
    robot: Option<String>,
    page: Option<usize>,
    #[allow(dead_code)]
    token: Option<String>,
}

async fn list_events(
    State(state): State<Arc<AppState>>,
    _user: User,
    query: Result<Query<EventsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let kind = match q.kind.as_deref() {
        None => None,
        Some("motion") | Some("Motion") => Some(EventKind::Motion),
        Some("fire") | Some("Fire") => Some(EventKind::Fire),
        Some(other) => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown kind {other:?}"))),
    };
    let robot = match q.robot.as_deref() {
        None => None,
        Some(r) => Some(Uuid::parse_str(r).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad robot id"))?),
    };
    let page = q.page.unwrap_or(0);
    let (events, total) = state.query_events(kind, robot, page);
    Ok(Json(json!({
        "events": events,
        "page": page,
        "per_page": state.cfg.events_page_size,
        "total": total,
    })))
}

async fn get_clip(
    State(state): State<Arc<AppState>>,
    _user: User,
    Path(clip_id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    if !is_clip_id(&clip_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown clip"));
    }
    match state.clip_bytes(&clip_id) {
        Ok(Some(bytes)) => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes)),
        Ok(None) => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown clip")),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn stream(
    State(state): State<Arc<AppState>>,
    _user: User,
    Path(raw_id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let id = robot_id(&raw_id, &state)?;
    Ok(ws.on_upgrade(move |socket| stream_frames(state, id, socket)))
}

async fn stream_frames(state: Arc<AppState>, robot_id: Uuid, socket: WebSocket) {
    let Some(queue) = state.subscribe_frames(robot_id) else { return };
    let (mut sink, mut incoming) = socket.split();
    loop {
        tokio::select! {
            frame = queue.pop() => {
                let Some(frame) = frame else { break };
                if sink.send(Message::Binary(frame)).await.is_err() {
                    break;
                }
            }
            msg = incoming.next() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    debug!(%robot_id, dropped = queue.dropped(), "stream viewer left");
    state.unsubscribe_frames(robot_id, &queue);
}

async fn notifications(State(state): State<Arc<AppState>>, User(user): User, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| push_notifications(state, user, socket))
}

async fn push_notifications(state: Arc<AppState>, user: String, socket: WebSocket) {
    let mut rx = state.subscribe_notifications();
    let (mut sink, mut incoming) = socket.split();
    loop {
        let text = tokio::select! {
            routed = rx.recv() => match routed {
                Ok(r) => {
                    // command results go only to whoever issued the command
                    if matches!(r.note, Notification::CommandResult { .. }) && r.user.as_deref() != Some(user.as_str()) {
                        continue;
                    }
                    serde_json::to_string(&r.note).expect("notification serializes")
                }
                Err(RecvError::Lagged(n)) => {
                    warn!(%user, missed = n, "notification subscriber lagging");
                    json!({ "type": "lagged", "missed": n }).to_string()
                }
                Err(RecvError::Closed) => break,
            },
            msg = incoming.next() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
        };
        if sink.send(Message::Text(text.into())).await.is_err() {
            break;
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/register", post(register))
        .route("/api/login", post(login))
        .route("/api/robots", get(list_robots))
        .route("/api/robots/{id}/commands", post(post_command))
        .route("/api/robots/{id}/stream", get(stream))
        .route("/api/events", get(list_events))
        .route("/api/clips/{id}", get(get_clip))
        .route("/api/notifications", get(notifications));
    let api = match &state.cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}
