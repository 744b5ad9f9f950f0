//! JSON-over-HTTP review service.
//!
//! Retrieval and adjudication for every (plan, CPT) run once while the state
//! is built, before any request is served. Requests only read that snapshot;
//! what-if requests re-run the engine on a private copy of the fact.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

use crate::engine::{self, explain, EngineError, Fact, Trace};
use crate::pipeline::{adjudicate, Adjudication, PipelineError};
use crate::plan::PlanDocument;
use crate::retrieval::{RetrievalConfig, Scorer};
use crate::rulelang::{is_valid_name, RuleBase};
use crate::workspace::Workspace;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub retrieval: RetrievalConfig,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub plan_id: String,
    pub cpt: String,
    #[serde(default)]
    pub attribute_overrides: BTreeMap<String, bool>,
}

/// The read-only snapshot served to every request.
pub struct AppState {
    pub workspace: Workspace,
    pub adjudications: BTreeMap<(String, String), Adjudication>,
    empty_base: RuleBase,
}

impl AppState {
    /// Adjudicates every CPT listed in the workspace under every plan.
    pub fn build(workspace: Workspace, config: &RetrievalConfig, scorer: &dyn Scorer) -> Result<Self, PipelineError> {
        let mut adjudications = BTreeMap::new();
        let empty_base = RuleBase::default();
        for plan in workspace.corpus.plans() {
            let base = workspace.rulebases.get(&plan.plan_id).unwrap_or(&empty_base);
            for entry in &workspace.cpts {
                let adj = adjudicate(plan, &entry.cpt, &entry.description, &workspace.store, base, config, scorer)?;
                adjudications.insert((plan.plan_id.clone(), entry.cpt.clone()), adj);
            }
        }
        Ok(AppState {
            workspace,
            adjudications,
            empty_base,
        })
    }

    fn base(&self, plan_id: &str) -> &RuleBase {
        self.workspace.rulebases.get(plan_id).unwrap_or(&self.empty_base)
    }

    fn lookup(&self, plan_id: &str, cpt: &str) -> Result<&Adjudication, ApiError> {
        if self.workspace.corpus.get(plan_id).is_none() {
            return Err(ApiError::not_found(format!("unknown plan `{plan_id}`")));
        }
        self.adjudications
            .get(&(plan_id.to_string(), cpt.to_string()))
            .ok_or_else(|| ApiError::not_found(format!("unknown CPT `{cpt}` for plan `{plan_id}`")))
    }

    /// Engine-only re-run with overrides on a copy of the stored fact.
    pub fn what_if(&self, req: &WhatIfRequest) -> Result<Trace, ApiError> {
        self.lookup(&req.plan_id, &req.cpt)?;
        if let Some(bad) = req.attribute_overrides.keys().find(|k| !is_valid_name(k)) {
            return Err(ApiError::bad_request(format!("invalid attribute name `{bad}`")));
        }
        let stored = self.workspace.store.fact(&req.cpt).unwrap_or_else(|| Fact {
            cpt: req.cpt.clone(),
            attributes: BTreeMap::new(),
        });
        let fact = stored
            .with_overrides(&req.attribute_overrides)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(engine::run(self.base(&req.plan_id), &fact))
    }

    /// The body of `GET /api/trace`.
    pub fn trace_body(&self, plan_id: &str, cpt: &str) -> Result<Value, ApiError> {
        let adj = self.lookup(plan_id, cpt)?;
        let plan = self.workspace.corpus.get(plan_id).expect("checked by lookup");
        trace_payload(plan, cpt, adj).map_err(|e| ApiError::internal(e.to_string()))
    }
}

/// Trace, retrieval rows and explanation for one adjudication. The CLI's
/// `run --output json` prints exactly this.
pub fn trace_payload(plan: &PlanDocument, cpt: &str, adj: &Adjudication) -> Result<Value, EngineError> {
    let explanation = explain(&adj.trace, plan)?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "plan_id": plan.plan_id,
        "cpt": cpt,
        "trace": adj.trace,
        "retrieval": adj.retrieval,
        "explanation": explanation,
        "escalate": adj.escalate,
        "diagnostics": adj.diagnostics,
    }))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }

    fn bad_request(message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message,
        }
    }

    fn internal(message: String) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message,
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "status": self.status.as_u16(), "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<AppState>;

async fn plans(State(state): State<Shared>) -> Json<Value> {
    let plans: Vec<Value> = state
        .workspace
        .corpus
        .plans()
        .iter()
        .map(|p| {
            json!({
                "plan_id": p.plan_id,
                "title": p.title,
                "subsections": p.subsections().count(),
                "rules": state.base(&p.plan_id).rules.len(),
            })
        })
        .collect();
    Json(json!({ "schema_version": SCHEMA_VERSION, "plans": plans }))
}

async fn plan_cpts(State(state): State<Shared>, Path(plan_id): Path<String>) -> Result<Json<Value>, ApiError> {
    if state.workspace.corpus.get(&plan_id).is_none() {
        return Err(ApiError::not_found(format!("unknown plan `{plan_id}`")));
    }
    let cpts: Vec<Value> = state
        .workspace
        .cpts
        .iter()
        .filter_map(|c| {
            state.adjudications.get(&(plan_id.clone(), c.cpt.clone())).map(|adj| {
                json!({
                    "cpt": c.cpt,
                    "description": c.description,
                    "final_status": adj.trace.final_status,
                    "escalate": adj.escalate,
                })
            })
        })
        .collect();
    Ok(Json(json!({ "schema_version": SCHEMA_VERSION, "plan_id": plan_id, "cpts": cpts })))
}

#[derive(Debug, Deserialize)]
struct PlanCpt {
    plan: Option<String>,
    cpt: Option<String>,
}

impl PlanCpt {
    fn require(self) -> Result<(String, String), ApiError> {
        match (self.plan, self.cpt) {
            (Some(p), Some(c)) => Ok((p, c)),
            _ => Err(ApiError::bad_request("query parameters `plan` and `cpt` are required".into())),
        }
    }
}

async fn trace(State(state): State<Shared>, Query(q): Query<PlanCpt>) -> Result<Json<Value>, ApiError> {
    let (plan, cpt) = q.require()?;
    state.trace_body(&plan, &cpt).map(Json)
}

async fn retrieval(State(state): State<Shared>, Query(q): Query<PlanCpt>) -> Result<Json<Value>, ApiError> {
    let (plan, cpt) = q.require()?;
    let adj = state.lookup(&plan, &cpt)?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "plan_id": plan,
        "cpt": cpt,
        "rows": adj.retrieval,
    })))
}

async fn what_if(State(state): State<Shared>, body: Result<Json<WhatIfRequest>, axum::extract::rejection::JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let trace = state.what_if(&req)?;
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "plan_id": req.plan_id,
        "cpt": req.cpt,
        "attribute_overrides": req.attribute_overrides,
        "trace": trace,
    })))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint".into())
}

pub fn cors_layer(origin: Option<&str>) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => layer.allow_origin(o),
        None => layer.allow_origin(Any),
    }
}

pub fn router(state: Arc<AppState>, cors: CorsLayer) -> Router {
    Router::new()
        .route("/api/plans", get(plans))
        .route("/api/plans/{id}/cpts", get(plan_cpts))
        .route("/api/trace", get(trace))
        .route("/api/retrieval", get(retrieval))
        .route("/api/whatif", post(what_if))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub fn serve(state: AppState, config: &ServiceConfig) -> std::io::Result<()> {
    let app = router(Arc::new(state), cors_layer(config.cors_origin.as_deref()));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.listen).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })
}
