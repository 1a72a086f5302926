//! HTTP front door for discovery audits: a single-worker FIFO queue whose
//! position is streamed over SSE, a global rate limit, and study logging.

pub mod queue;
pub mod rate_limit;
pub mod store;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio_stream::wrappers::ReceiverStream;

use pdprobe_core::gateway::Gateway;
use pdprobe_core::probe::default_seed;
use pdprobe_core::scoring::{AssociationDistribution, DistributionEntry};
use pdprobe_core::{
    audit_pair, AuditConfig, BaselineStore, Catalog, Prefix, PrefixKind, ProbePlan,
};

pub use queue::{Auditor, JobQueue, JobResult, QueueFull, Ticket};
pub use rate_limit::{Clock, ManualClock, RateLimiter, SystemClock};
pub use store::{
    Answer, FeedbackRow, JsonlStore, LoggedCandidate, MemoryStore, NewResult, ResultRow,
    StoreError, StudyStore,
};

/// A discovery request. Values arrive already cut to two-character cues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRequest {
    pub subject: String,
    pub property_id: String,
    pub prefixes: Vec<String>,
    pub expected_values: usize,
}

impl AuditRequest {
    pub fn validate(&self, catalog: &Catalog) -> Result<Vec<Prefix>, String> {
        if self.subject.trim().is_empty() {
            return Err("subject is required".into());
        }
        if catalog.get(&self.property_id).is_none() {
            return Err(format!("unknown property {:?}", self.property_id));
        }
        if self.expected_values == 0 {
            return Err("expected_values must be at least 1".into());
        }
        if self.prefixes.is_empty() {
            return Err("at least one prefix is required".into());
        }
        let mut out: Vec<Prefix> = Vec::with_capacity(self.prefixes.len());
        for p in &self.prefixes {
            let prefix = Prefix::parse(p, PrefixKind::GroundTruth).map_err(|e| e.to_string())?;
            if !out.contains(&prefix) {
                out.push(prefix);
            }
        }
        Ok(out)
    }
}

/// Runs audits against a live gateway.
pub struct Engine {
    pub gateway: Gateway,
    pub catalog: Arc<Catalog>,
    pub baselines: Arc<BaselineStore>,
    pub config: AuditConfig,
}

impl Auditor for Engine {
    fn audit(&self, request: &AuditRequest) -> JobResult {
        let prefixes = request.validate(&self.catalog)?;
        let property = self.catalog.get(&request.property_id).expect("validated");
        let seed = self
            .config
            .seed
            .unwrap_or_else(|| default_seed(&request.subject, &request.property_id));
        let plan = ProbePlan::from_prefixes(
            &request.subject,
            property,
            prefixes,
            self.config.counterfactuals,
            seed,
        )
        .map_err(|e| e.to_string())?;
        let result = audit_pair(
            &self.gateway,
            property,
            &plan,
            &self.baselines,
            &self.config,
            request.expected_values,
        )
        .map_err(|e| e.to_string())?;
        if result.missing_probes == result.planned_probes {
            return Err("the model backend did not answer any probe".into());
        }
        Ok(result.scored.distribution)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub rate_limit: usize,
    pub queue_cap: usize,
    pub tick: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            rate_limit: 20,
            queue_cap: 100,
            tick: Duration::from_secs(1),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub queue: Arc<JobQueue>,
    pub limiter: Arc<RateLimiter>,
    pub store: Arc<dyn StudyStore>,
    pub catalog: Arc<Catalog>,
    pub tick: Duration,
}

#[derive(Debug, Serialize)]
struct PositionEvent {
    position: usize,
}

#[derive(Debug, Serialize)]
struct ResultEvent {
    entries: Vec<DistributionEntry>,
    confidence: f64,
    low_confidence: bool,
}

impl From<AssociationDistribution> for ResultEvent {
    fn from(d: AssociationDistribution) -> Self {
        Self {
            entries: d.entries,
            confidence: d.confidence,
            low_confidence: d.low_confidence,
        }
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "message": message.into() }))).into_response()
}

fn event<T: Serialize>(name: &str, data: &T) -> Event {
    Event::default()
        .event(name)
        .json_data(data)
        .expect("event payloads serialize")
}

async fn discover(
    State(state): State<AppState>,
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Ok(Json(body)) = body else {
        return error_response(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let request: AuditRequest = match serde_json::from_value(body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if let Err(e) = request.validate(&state.catalog) {
        return error_response(StatusCode::BAD_REQUEST, e);
    }
    if let Err(wait) = state.limiter.try_admit() {
        let secs = wait.as_secs() + u64::from(wait.subsec_nanos() > 0);
        let mut resp = error_response(StatusCode::TOO_MANY_REQUESTS, "rate limit exceeded");
        resp.headers_mut().insert(
            header::RETRY_AFTER,
            secs.max(1).to_string().parse().expect("numeric header"),
        );
        return resp;
    }
    let ticket = match state.queue.enqueue(request) {
        Ok(t) => t,
        Err(QueueFull) => return error_response(StatusCode::SERVICE_UNAVAILABLE, "queue is full"),
    };

    let (tx, rx) = mpsc::channel::<Result<Event, Infallible>>(8);
    let queue = state.queue.clone();
    let tick = state.tick;
    tokio::spawn(async move {
        let Ticket {
            id,
            position,
            mut done,
        } = ticket;
        let mut last = position;
        if tx
            .send(Ok(event("position", &PositionEvent { position })))
            .await
            .is_err()
        {
            return;
        }
        let mut interval = tokio::time::interval_at(tokio::time::Instant::now() + tick, tick);
        let terminal = loop {
            tokio::select! {
                biased;
                res = &mut done => break match res {
                    Ok(Ok(dist)) => event("result", &ResultEvent::from(dist)),
                    Ok(Err(message)) => event("error", &json!({ "message": message })),
                    Err(_) => event("error", &json!({ "message": "worker stopped" })),
                },
                _ = interval.tick() => {
                    if let Some(p) = queue.position(id) {
                        last = last.min(p);
                        if tx.send(Ok(event("position", &PositionEvent { position: last }))).await.is_err() {
                            return;
                        }
                    }
                }
            }
        };
        let _ = tx.send(Ok(terminal)).await;
    });

    Sse::new(ReceiverStream::new(rx))
        .keep_alive(KeepAlive::default())
        .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StudyPayload {
    Result {
        participant_id: String,
        property_id: String,
        request_id: String,
        confidence: f64,
        candidates: Vec<LoggedCandidate>,
    },
    Feedback(FeedbackRow),
}

async fn user_study(
    State(state): State<AppState>,
    body: Result<Json<Value>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Ok(Json(body)) = body else {
        return error_response(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let payload: StudyPayload = match serde_json::from_value(body) {
        Ok(p) => p,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let outcome = match payload {
        StudyPayload::Result {
            participant_id,
            property_id,
            request_id,
            confidence,
            candidates,
        } => state
            .store
            .record_result(NewResult {
                participant_id,
                property_id,
                request_id,
                confidence,
                candidates,
            })
            .map(|id| json!({ "result_id": id })),
        StudyPayload::Feedback(row) => state
            .store
            .record_feedback(row)
            .map(|_| json!({ "ok": true })),
    };
    match outcome {
        Ok(v) => Json(v).into_response(),
        Err(e @ StoreError::UnknownResult(_)) => {
            error_response(StatusCode::NOT_FOUND, e.to_string())
        }
        Err(e @ StoreError::Invalid(_)) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ StoreError::Unavailable(_)) => {
            error_response(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
        }
    }
}

async fn catalog(State(state): State<AppState>) -> Json<Value> {
    let items: Vec<Value> = state
        .catalog
        .properties()
        .iter()
        .map(|p| json!({ "id": p.id, "label": p.label, "category": p.category.name() }))
        .collect();
    Json(Value::Array(items))
}

pub fn build_router(state: AppState) -> Router {
    Router::new()
        .route("/api/discover", post(discover))
        .route("/api/user-study", post(user_study))
        .route("/api/catalog", get(catalog))
        .with_state(state)
}

/// Wires the queue, limiter and worker. Must be called inside a tokio runtime.
pub fn start(
    auditor: Arc<dyn Auditor>,
    store: Arc<dyn StudyStore>,
    catalog: Arc<Catalog>,
    limiter: RateLimiter,
    config: &ServiceConfig,
) -> Router {
    let queue = JobQueue::new(config.queue_cap);
    tokio::spawn(queue.clone().run_worker(auditor));
    build_router(AppState {
        queue,
        limiter: Arc::new(limiter),
        store,
        catalog,
        tick: config.tick,
    })
}

pub async fn serve(
    auditor: Arc<dyn Auditor>,
    store: Arc<dyn StudyStore>,
    catalog: Arc<Catalog>,
    config: ServiceConfig,
) -> std::io::Result<()> {
    let router = start(
        auditor,
        store,
        catalog,
        RateLimiter::per_minute(config.rate_limit),
        &config,
    );
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router).await
}
