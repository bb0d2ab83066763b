use std::collections::BTreeSet;
use std::sync::Arc;

use autoreview_core::eval::score_reviews;
use autoreview_core::{CallTranscript, Corpus, FieldId, FieldRecord, Utterance, DEFAULT_N_MAX};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ApiError;
use crate::store::{Action, ItemFilter, ItemStatus, ReviewItem};
use crate::AppState;

const MAX_PAGE_SIZE: usize = 1000;
const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/export", get(export_run))
        .route("/runs/{id}/report", get(run_report))
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/review", post(review_item))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .merge(protected)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.bearer_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| constant_time_eq(t.as_bytes(), token.as_bytes()));
        if !ok {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Deserialize)]
pub struct IngestRequest {
    pub calls: Vec<CallTranscript>,
    pub records: Vec<FieldRecord>,
}

async fn create_run(
    State(state): State<Arc<AppState>>,
    Json(req): Json<IngestRequest>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let corpus = Corpus {
        calls: req.calls,
        records: req.records,
        references: Vec::new(),
    };
    let mut problems = corpus.validate(DEFAULT_N_MAX);
    let known: BTreeSet<&FieldId> = state.engine.specs.iter().map(|s| &s.field_id).collect();
    problems.extend(
        corpus
            .records
            .iter()
            .filter(|r| !known.contains(&r.field_id))
            .map(|r| format!("{}/{}: no spec for this field", r.call_id, r.field_id)),
    );
    if corpus.calls.is_empty() {
        problems.push("no calls".into());
    }
    if !problems.is_empty() {
        return Err(ApiError::Validation(problems.join("; ")));
    }
    let run = state.store.create_run(corpus.calls.len(), corpus.records.clone())?;
    let run_id = run.run_id.clone();
    let st = state.clone();
    let id = run_id.clone();
    tokio::spawn(async move {
        let engine = st.engine.clone();
        let res = tokio::task::spawn_blocking(move || {
            let decisions = engine.review_corpus(&corpus)?;
            Ok::<_, autoreview_core::Error>(attach_context(&corpus, decisions))
        })
        .await;
        let outcome = match res {
            Ok(Ok(reviewed)) => st.store.complete_run(&id, reviewed).map(drop),
            Ok(Err(e)) => st.store.fail_run(&id, e.to_string()),
            Err(e) => st.store.fail_run(&id, format!("review task panicked: {e}")),
        };
        if let Err(e) = outcome {
            log::error!("run {id}: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

/// Pairs each decision with its live value and the original evidence turns.
fn attach_context(
    corpus: &Corpus,
    decisions: Vec<autoreview_core::ReviewDecision>,
) -> Vec<(autoreview_core::ReviewDecision, String, Vec<Utterance>)> {
    let calls: std::collections::BTreeMap<&str, &CallTranscript> =
        corpus.calls.iter().map(|c| (c.call_id.as_str(), c)).collect();
    let lives: std::collections::BTreeMap<_, &str> =
        corpus.records.iter().map(|r| (r.key(), r.live_call_value.as_str())).collect();
    decisions
        .into_iter()
        .map(|d| {
            let live = lives.get(&d.key()).copied().unwrap_or_default().to_string();
            let evidence = calls
                .get(d.call_id.as_str())
                .map(|c| d.evidence.iter().filter_map(|&i| c.utterances.get(i).cloned()).collect())
                .unwrap_or_default();
            (d, live, evidence)
        })
        .collect()
}

#[derive(Serialize)]
struct RunView {
    run_id: String,
    status: crate::store::RunStatus,
    calls: usize,
    items: usize,
    pending: usize,
    approved: usize,
    corrected: usize,
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RunView>, ApiError> {
    let run = state.store.run(&id)?;
    let (pending, approved, corrected) = state.store.counts(&id);
    Ok(Json(RunView {
        run_id: run.run_id,
        status: run.status,
        calls: run.calls,
        items: run.items,
        pending,
        approved,
        corrected,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct ItemsQuery {
    status: Option<String>,
    field: Option<String>,
    run: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Serialize)]
struct ItemsPage {
    items: Vec<ReviewItem>,
    page: usize,
    page_size: usize,
    total: usize,
}

async fn list_items(State(state): State<Arc<AppState>>, Query(q): Query<ItemsQuery>) -> Result<Json<ItemsPage>, ApiError> {
    let filter = ItemFilter {
        status: q.status.as_deref().map(str::parse::<ItemStatus>).transpose()?,
        field: q.field.as_deref().map(|f| f.parse().expect("infallible")),
        run: q.run,
    };
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(state.page_size);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::BadRequest(format!(
            "page must be >= 1 and page_size in 1..={MAX_PAGE_SIZE}"
        )));
    }
    let (items, total) = state.store.query(&filter, page, page_size);
    Ok(Json(ItemsPage {
        items,
        page,
        page_size,
        total,
    }))
}

async fn get_item(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ReviewItem>, ApiError> {
    Ok(Json(state.store.item(&id)?))
}

#[derive(Debug, Deserialize)]
pub struct ReviewRequest {
    pub version: u64,
    pub action: Action,
    #[serde(default)]
    pub corrected_value: Option<String>,
}

async fn review_item(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ReviewRequest>,
) -> Result<Json<ReviewItem>, ApiError> {
    let item = state.store.item(&id)?;
    let spec = state.engine.specs.iter().find(|s| s.field_id == item.field_id);
    let updated = state
        .store
        .submit_review(&id, req.version, req.action, req.corrected_value.as_deref(), spec)?;
    Ok(Json(updated))
}

async fn export_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mut body = String::new();
    for r in state.store.export_gold(&id)? {
        body.push_str(&serde_json::to_string(&r).map_err(|e| ApiError::Internal(e.to_string()))?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Scores the run's pipeline decisions against the golds it was ingested
/// with.
async fn run_report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = state.store.run(&id)?;
    if run.status != crate::store::RunStatus::Complete {
        return Err(ApiError::Conflict(format!("run {id} is not complete")));
    }
    if run.records.is_empty() || run.records.iter().any(|r| r.gold_value.is_none()) {
        return Err(ApiError::Conflict(format!("run {id} was ingested without gold values")));
    }
    let decisions: Vec<_> = state.store.run_items(&id).into_iter().map(|i| i.decision).collect();
    let keys: BTreeSet<_> = decisions.iter().map(|d| d.key()).collect();
    let records: Vec<_> = run.records.into_iter().filter(|r| keys.contains(&r.key())).collect();
    let report = score_reviews(&decisions, &records).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(report).into_response())
}
