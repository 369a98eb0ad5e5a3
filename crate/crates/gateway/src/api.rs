//! HTTP + WebSocket routes.
//!
//! | route | body / query | response |
//! |---|---|---|
//! | `GET /health` | | corpus, catalog and task counts |
//! | `POST /sessions` | `{user, role, team}` | `{session}` token |
//! | `GET /maps` | `?query=&session=` | map summaries (all, or matching titles) |
//! | `GET /maps/{id}` | | map export without weights |
//! | `GET /videos/{id}/shots` | | storyboard entries |
//! | `POST /search/{concept,color,similarity,sketch,shot_filter}` | `{session, ...}` | result set |
//! | `POST /history/back` | `{session}` | new current result set, or 204 |
//! | `GET /similarity-tab` | `?session=` | last similarity result set, or 204 |
//! | `POST /usage` | `{session, feature}` | `{recorded}` |
//! | `GET /tasks` | | task list |
//! | `POST /tasks/{id}/start` | | the task |
//! | `POST /tasks/{id}/submit` | `{session, video, shot_index, timestamp_sec}` | judged score log entry |
//! | `GET /reports/usage` | `?format=csv\|json` | usage report |
//! | `GET /collab/{session}` | WebSocket | collab wire messages |
//! | `GET /spectator/{session}` | | spectator snapshot |
//!
//! Errors come back as `{"error": "..."}` with a 4xx/5xx status.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use divex_core::collab::{Effect, Role};
use divex_core::corpus::CorpusError;
use divex_core::search::ResultSet;
use divex_core::taskserver::{TaskError, UsageFeature};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc};

use crate::{Engine, GatewayError, SearchRequest};

type AppState = Arc<Engine>;
type ApiResult<T> = Result<T, GatewayError>;

impl GatewayError {
    fn status(&self) -> StatusCode {
        match self {
            GatewayError::Search(_) | GatewayError::Collab(_) | GatewayError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            GatewayError::UnknownSession(_)
            | GatewayError::UnknownMap(_)
            | GatewayError::Task(TaskError::UnknownTask(_))
            | GatewayError::Corpus(CorpusError::UnknownVideo(_)) => StatusCode::NOT_FOUND,
            GatewayError::Task(TaskError::InvalidSubmission(_) | TaskError::TaskMismatch { .. }) => {
                StatusCode::BAD_REQUEST
            }
            GatewayError::TaskNotActive(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/maps", get(list_maps))
        .route("/maps/{id}", get(get_map))
        .route("/videos/{id}/shots", get(video_shots))
        .route("/search/{kind}", post(search))
        .route("/history/back", post(history_back))
        .route("/similarity-tab", get(similarity_tab))
        .route("/usage", post(record_usage))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}/start", post(start_task))
        .route("/tasks/{id}/submit", post(submit))
        .route("/reports/usage", get(usage_report))
        .route("/collab/{session}", get(collab_socket))
        .route("/spectator/{session}", get(spectator))
        .with_state(engine)
}

async fn health(State(e): State<AppState>) -> impl IntoResponse {
    Json(e.health())
}

#[derive(Deserialize)]
struct NewSession {
    user: String,
    role: Role,
    team: String,
}

async fn create_session(State(e): State<AppState>, Json(b): Json<NewSession>) -> ApiResult<impl IntoResponse> {
    let token = e.create_session(&b.user, b.role, &b.team)?;
    Ok((StatusCode::CREATED, Json(json!({ "session": token }))))
}

#[derive(Deserialize)]
struct MapQuery {
    query: Option<String>,
    session: Option<String>,
}

async fn list_maps(State(e): State<AppState>, Query(q): Query<MapQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(match &q.query {
        Some(query) => e.search_maps(q.session.as_deref(), query)?,
        None => e.list_maps(),
    }))
}

async fn get_map(State(e): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(e.map_export(&id)?))
}

async fn video_shots(State(e): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(e.shots(&id)?))
}

#[derive(Deserialize)]
struct SearchBody {
    session: String,
    #[serde(flatten)]
    request: SearchRequest,
}

async fn search(
    State(e): State<AppState>,
    Path(kind): Path<String>,
    Json(mut body): Json<Value>,
) -> ApiResult<impl IntoResponse> {
    let Some(obj) = body.as_object_mut() else {
        return Err(GatewayError::BadRequest("body must be a JSON object".into()));
    };
    if !matches!(kind.as_str(), "concept" | "color" | "similarity" | "sketch" | "shot_filter") {
        return Err(GatewayError::BadRequest(format!("unknown search kind {kind:?}")));
    }
    obj.insert("kind".into(), Value::String(kind));
    let b: SearchBody = serde_json::from_value(body).map_err(|err| GatewayError::BadRequest(err.to_string()))?;
    let e2 = e.clone();
    // searches are CPU-bound linear scans; keep them off the async workers
    let results = tokio::task::spawn_blocking(move || e2.dispatch_search(&b.session, b.request))
        .await
        .map_err(|err| GatewayError::BadRequest(err.to_string()))??;
    Ok(Json(results))
}

#[derive(Deserialize)]
struct SessionBody {
    session: String,
}

fn optional(results: Option<ResultSet>) -> Response {
    match results {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn history_back(State(e): State<AppState>, Json(b): Json<SessionBody>) -> ApiResult<Response> {
    Ok(optional(e.history_back(&b.session)?))
}

async fn similarity_tab(State(e): State<AppState>, Query(q): Query<SessionBody>) -> ApiResult<Response> {
    Ok(optional(e.similarity_tab(&q.session)?))
}

#[derive(Deserialize)]
struct UsageBody {
    session: String,
    feature: UsageFeature,
}

async fn record_usage(State(e): State<AppState>, Json(b): Json<UsageBody>) -> ApiResult<impl IntoResponse> {
    let recorded = e.record_usage(&b.session, b.feature)?;
    Ok(Json(json!({ "recorded": recorded })))
}

async fn list_tasks(State(e): State<AppState>) -> impl IntoResponse {
    Json(e.tasks())
}

async fn start_task(State(e): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(e.start_task(&id)?))
}

#[derive(Deserialize)]
struct SubmitBody {
    session: String,
    video: String,
    shot_index: u32,
    timestamp_sec: f64,
}

async fn submit(
    State(e): State<AppState>,
    Path(id): Path<String>,
    Json(b): Json<SubmitBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(e.submit(&b.session, &id, &b.video, b.shot_index, b.timestamp_sec)?))
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn usage_report(State(e): State<AppState>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let report = e.usage_report()?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(report).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], report.to_csv()).into_response()),
        Some(other) => Err(GatewayError::BadRequest(format!("unknown format {other:?}"))),
    }
}

async fn spectator(State(e): State<AppState>, Path(session): Path<String>) -> impl IntoResponse {
    Json(e.spectator(&session))
}

async fn collab_socket(
    State(e): State<AppState>,
    Path(session): Path<String>,
    ws: WebSocketUpgrade,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_collab(socket, e, session))
}

/// Applied messages are broadcast to every socket of the session, the
/// sender included. Rejections and errors go to the sender only, as
/// `{"type":"rejected","effect":...}` and `{"type":"error","reason":...}`.
async fn run_collab(socket: WebSocket, engine: Arc<Engine>, session: String) {
    let room = engine.room(&session);
    let mut feed = room.subscribe();
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<String>();

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                m = feed.recv() => match m {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::warn!(skipped = n, "collab subscriber lagging");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                d = direct_rx.recv() => match d {
                    Some(t) => t,
                    None => break,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(frame)) = stream.next().await {
        let bytes = match &frame {
            Message::Text(t) => t.as_bytes().to_vec(),
            Message::Binary(b) => b.to_vec(),
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match room.apply_wire(&session, &bytes) {
            Ok(Effect::Applied) => None,
            Ok(effect) => Some(json!({ "type": "rejected", "effect": effect })),
            Err(err) => Some(json!({ "type": "error", "reason": err.to_string() })),
        };
        if let Some(r) = reply {
            if direct_tx.send(r.to_string()).is_err() {
                break;
            }
        }
    }
    drop(direct_tx);
    writer.abort();
}
