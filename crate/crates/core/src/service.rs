//! HTTP API over stored runs, with MISets streamed as server-sent events.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use crate::engine::ProvenanceKind;
use crate::error::EngineError;
use crate::model::{CancelToken, ExecutionBudget};
use crate::store::{LoadedRun, ProvenanceRequest, StoreError, StreamEnd, TraceStore};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7070";
pub const DEFAULT_BUDGET: u64 = 10_000;
pub const PAGE_SIZE: usize = 50;

struct AppState {
    store: TraceStore,
    runs: RwLock<HashMap<String, Arc<LoadedRun>>>,
}

impl AppState {
    fn run(&self, id: &str) -> Result<Arc<LoadedRun>, ApiError> {
        if let Some(r) = self.runs.read().expect("run table lock").get(id) {
            return Ok(r.clone());
        }
        let run = Arc::new(self.store.open(id)?);
        self.runs
            .write()
            .expect("run table lock")
            .insert(id.to_string(), run.clone());
        Ok(run)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownRun(_)
            | StoreError::UnknownNode(_)
            | StoreError::UnknownRecord { .. } => StatusCode::NOT_FOUND,
            StoreError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            StoreError::Engine(EngineError::BudgetExhausted { .. }) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(store: TraceStore) -> Router {
    let state = Arc::new(AppState {
        store,
        runs: RwLock::new(HashMap::new()),
    });
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/graph", get(graph))
        .route("/runs/{id}/nodes/{node}/outputs", get(outputs))
        .route("/runs/{id}/provenance", post(provenance))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(store: TraceStore, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}

async fn list_runs(State(st): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let runs = st.store.list_runs()?;
    Ok(Json(json!({ "runs": runs })).into_response())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct NodeView {
    id: String,
    kind: String,
    arity: usize,
    spec_level: &'static str,
    properties: crate::model::PropertyClass,
    fast_path: bool,
    outputs: usize,
}

async fn graph(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let run = st.run(&id)?;
    let mut nodes = Vec::new();
    for n in &run.trace.config.nodes {
        let op = &run.graph().node(&n.id).expect("built from config").op;
        nodes.push(NodeView {
            id: n.id.clone(),
            kind: n.kind.clone(),
            arity: op.arity,
            spec_level: op.spec_level.name(),
            properties: op.properties.clone(),
            fast_path: op.properties.fast_path_eligible() && !run.is_downgraded(&n.id),
            outputs: run.node_run(&n.id)?.output.len(),
        });
    }
    Ok(Json(json!({
        "runId": run.trace.run_id,
        "configHash": run.trace.config_hash,
        "sink": run.trace.sink(),
        "nodes": nodes,
        "edges": run.trace.config.edges,
    }))
    .into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PageQuery {
    #[serde(default)]
    page: usize,
    #[serde(default)]
    page_size: Option<usize>,
}

async fn outputs(
    State(st): State<Arc<AppState>>,
    Path((id, node)): Path<(String, String)>,
    Query(q): Query<PageQuery>,
) -> Result<Response, ApiError> {
    let run = st.run(&id)?;
    let size = q.page_size.unwrap_or(PAGE_SIZE).clamp(1, 1000);
    let total = run.node_run(&node)?.output.len();
    let records: Vec<_> = run
        .outputs_page(&node, q.page, size)?
        .into_iter()
        .map(|r| json!({ "id": r.id.local, "value": r.value, "digest": r.digest() }))
        .collect();
    Ok(Json(json!({
        "node": node,
        "page": q.page,
        "pageSize": size,
        "total": total,
        "records": records,
    }))
    .into_response())
}

async fn provenance(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ProvenanceRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        message: e.body_text(),
    })?;
    req.validate()?;
    let run = st.run(&id)?;
    let node = match &req.node {
        Some(n) => n.clone(),
        None => run
            .trace
            .sink()
            .map(str::to_string)
            .ok_or_else(|| StoreError::InvalidRequest("the pipeline has no sink".into()))?,
    };
    run.resolve(&node, &req.record)?;
    let limit = req.budget.unwrap_or(DEFAULT_BUDGET);

    if matches!(req.kind, ProvenanceKind::Any | ProvenanceKind::All) {
        return Ok(stream_response(run, req, limit).into_response());
    }
    let served = tokio::task::spawn_blocking(move || {
        run.provenance_get_or_compute(&req, &mut ExecutionBudget::with_limit(limit))
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })??;
    Ok(([(header::CONTENT_TYPE, "application/json")], served.json).into_response())
}

/// Cancels the search when the response body is dropped.
struct CancelOnDrop(CancelToken);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.cancel();
    }
}

enum Msg {
    Miset(Vec<String>),
    Done(serde_json::Value),
    Failed(String),
}

fn stream_response(
    run: Arc<LoadedRun>,
    req: ProvenanceRequest,
    limit: u64,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let token = CancelToken::new();
    let (tx, rx) = mpsc::channel::<Msg>(16);
    let worker_token = token.clone();
    tokio::task::spawn_blocking(move || {
        let mut budget = ExecutionBudget::with_limit(limit).with_cancel(worker_token.clone());
        let out = run.stream_misets(&req, &mut budget, |m| {
            let ids = m.iter().map(ToString::to_string).collect();
            if tx.blocking_send(Msg::Miset(ids)).is_err() {
                worker_token.cancel();
                return false;
            }
            !worker_token.is_cancelled()
        });
        let last = match out {
            Ok(s) => {
                let mut done = json!({
                    "exhausted": s.exhausted,
                    "budgetSpent": s.budget_spent,
                    "end": s.end,
                });
                if s.end == StreamEnd::BudgetExhausted {
                    done["status"] = json!(409);
                }
                Msg::Done(done)
            }
            Err(e) => Msg::Failed(e.to_string()),
        };
        let _ = tx.blocking_send(last);
    });

    let guard = CancelOnDrop(token);
    let events = stream::unfold((rx, guard, false), |(mut rx, guard, finished)| async move {
        if finished {
            return None;
        }
        let msg = rx.recv().await?;
        let (event, finished) = match msg {
            Msg::Miset(ids) => (Event::default().event("miset").json_data(ids), false),
            Msg::Done(v) => (Event::default().event("done").json_data(v), true),
            Msg::Failed(m) => (
                Event::default()
                    .event("error")
                    .json_data(json!({ "error": m })),
                true,
            ),
        };
        let event =
            event.unwrap_or_else(|_| Event::default().event("error").data("serialization failed"));
        Some((Ok(event), (rx, guard, finished)))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}
