//! JSON-over-HTTP front end: training jobs, prediction, reports.
//!
//! One training job may run at a time. Readers hold an `Arc` to the model
//! they started with, and a finished job replaces the model in one swap.

mod registry;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::data::{generate_synthetic_cohort, parse_cohort_csv, RawTable, RowDiagnostic, Schema, SyntheticConfig};
use crate::explain::{predict_new, PredictionReport};
pub use crate::explain::{parse_patient, FieldError};
use crate::trainer::{run_ablations, train_table, AblationReport, EpochProgress, EvalReport, TrainConfig, TrainedModel};

pub use registry::Registry;

pub const DEFAULT_PORT: u16 = 8080;

/// Where training data comes from: `{"synthetic": {"n": 540, "seed": 7}}`
/// or `{"csv": "<file contents>"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        n: usize,
        seed: u64,
        #[serde(default)]
        generator: Option<SyntheticConfig>,
    },
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    #[serde(default)]
    pub config: TrainConfig,
    pub data: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRequest {
    #[serde(default)]
    pub config: TrainConfig,
    pub data: DataSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub epoch: usize,
    pub epochs: usize,
    pub loss: Option<f64>,
    pub report: Option<EvalReport>,
    pub model_version: Option<String>,
    pub error: Option<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone)]
struct LoadedModel {
    version: String,
    model: Arc<TrainedModel>,
}

#[derive(Debug)]
struct Shared {
    registry: Registry,
    model: RwLock<Option<LoadedModel>>,
    ablation: RwLock<Option<AblationReport>>,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    active_job: Mutex<Option<u64>>,
    next_job: AtomicU64,
}

#[derive(Debug, Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// Opens the registry and loads its current model and ablation table.
    pub fn open(registry_dir: impl Into<PathBuf>) -> crate::Result<Self> {
        let registry = Registry::open(registry_dir)?;
        let model = registry.load_current()?.map(|(version, m)| LoadedModel {
            version,
            model: Arc::new(m),
        });
        let ablation = registry.load_ablation()?;
        Ok(Self {
            shared: Arc::new(Shared {
                registry,
                model: RwLock::new(model),
                ablation: RwLock::new(ablation),
                jobs: Mutex::new(BTreeMap::new()),
                active_job: Mutex::new(None),
                next_job: AtomicU64::new(1),
            }),
        })
    }

    fn current(&self) -> Option<LoadedModel> {
        self.shared.model.read().expect("model lock").clone()
    }

    /// Currently served model, if any.
    pub fn model(&self) -> Option<Arc<TrainedModel>> {
        self.current().map(|l| l.model)
    }

    pub fn job(&self, id: u64) -> Option<JobStatus> {
        self.shared.jobs.lock().expect("jobs lock").get(&id).cloned()
    }

    fn update_job(&self, id: u64, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.shared.jobs.lock().expect("jobs lock").get_mut(&id) {
            f(job);
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }

    fn no_model() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
}

/// Resolves a data source into a raw table, rejecting malformed CSV.
fn load_source(source: &DataSource) -> ApiResult<RawTable> {
    let schema = Schema::diabetes();
    match source {
        DataSource::Synthetic { n, seed, generator } => {
            let cfg = generator.clone().unwrap_or_default();
            let cohort = generate_synthetic_cohort(*n, *seed, &cfg).map_err(bad_request)?;
            Ok(cohort.to_raw(&schema))
        }
        DataSource::Csv(text) => {
            let load = parse_cohort_csv(text.as_bytes(), &schema).map_err(bad_request)?;
            let malformed: Vec<&RowDiagnostic> = load.malformed_rows().collect();
            if !malformed.is_empty() || load.table.is_empty() {
                let all = serde_json::to_value(&load.rejected).unwrap_or(Value::Null);
                let msg = if malformed.is_empty() { "no usable rows" } else { "malformed rows" };
                return Err(ApiError::new(StatusCode::BAD_REQUEST, msg).with("rows", all));
            }
            Ok(load.table)
        }
    }
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let training = state.shared.active_job.lock().expect("job lock").is_some();
    Json(json!({
        "status": "ok",
        "model_loaded": state.current().is_some(),
        "training": training,
    }))
}

async fn start_training(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult<Response> {
    // Hold the slot lock for the whole check-and-claim so two requests cannot both start.
    let mut active = state.shared.active_job.lock().expect("job lock");
    if let Some(id) = *active {
        return Err(ApiError::new(StatusCode::CONFLICT, "a training job is already running")
            .with("job_id", json!(id)));
    }
    let request: TrainRequest = serde_json::from_value(body).map_err(bad_request)?;
    request.config.validate().map_err(bad_request)?;
    let table = load_source(&request.data)?;

    let id = state.shared.next_job.fetch_add(1, Ordering::SeqCst);
    state.shared.jobs.lock().expect("jobs lock").insert(
        id,
        JobStatus {
            id,
            state: JobState::Running,
            epoch: 0,
            epochs: request.config.epochs,
            loss: None,
            report: None,
            model_version: None,
            error: None,
            started_at: now(),
            finished_at: None,
        },
    );
    *active = Some(id);
    drop(active);

    let worker = state.clone();
    let config = request.config;
    tokio::task::spawn_blocking(move || {
        let progress_state = worker.clone();
        let result = train_table(&table, &config, |p: EpochProgress| {
            progress_state.update_job(id, |j| {
                j.epoch = p.epoch;
                j.loss = Some(p.loss.total);
            });
        });
        let finished = result.and_then(|out| {
            let version = worker.shared.registry.save(&out.model)?;
            Ok((version, out))
        });
        match finished {
            Ok((version, out)) => {
                *worker.shared.model.write().expect("model lock") = Some(LoadedModel {
                    version: version.clone(),
                    model: Arc::new(out.model),
                });
                worker.update_job(id, |j| {
                    j.state = JobState::Succeeded;
                    j.report = Some(out.report);
                    j.model_version = Some(version);
                    j.finished_at = Some(now());
                });
            }
            Err(e) => {
                tracing::warn!(job = id, error = %e, "training failed");
                worker.update_job(id, |j| {
                    j.state = JobState::Failed;
                    j.error = Some(e.to_string());
                    j.finished_at = Some(now());
                });
            }
        }
        *worker.shared.active_job.lock().expect("job lock") = None;
    });

    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn job_status(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    state
        .job(id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}")))
}

async fn predict(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult<Json<PredictionReport>> {
    let loaded = state.current().ok_or_else(ApiError::no_model)?;
    let row = parse_patient(&body, &loaded.model.feature_names).map_err(|errors| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid patient fields")
            .with("fields", serde_json::to_value(errors).unwrap_or(Value::Null))
    })?;
    let mut report = predict_new(&row, &loaded.model)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    report.timestamp = Some(now());
    Ok(Json(report))
}

async fn model_info(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let loaded = state.current().ok_or_else(ApiError::no_model)?;
    let m = &loaded.model;
    Ok(Json(json!({
        "model_id": m.model_id(),
        "version": loaded.version,
        "h": m.params.hidden(),
        "d": m.params.input_dim(),
        "k_min": m.config.k_min,
        "k_max": m.config.k_max,
        "variant": m.config.variant,
        "config": m.config,
        "class_names": m.class_names,
        "feature_names": m.feature_names,
        "train_size": m.x_train.rows(),
    })))
}

async fn metrics(State(state): State<AppState>) -> ApiResult<Json<EvalReport>> {
    let loaded = state.current().ok_or_else(ApiError::no_model)?;
    loaded
        .model
        .report
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model has no evaluation report"))
}

async fn roc(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let loaded = state.current().ok_or_else(ApiError::no_model)?;
    let report = loaded
        .model
        .report
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model has no evaluation report"))?;
    let curves: Vec<Value> = report
        .roc_curves()
        .into_iter()
        .zip(&report.per_class)
        .map(|((class, points), m)| {
            let points: Vec<Value> = points
                .unwrap_or_default()
                .iter()
                .map(|p| {
                    let threshold = if p.threshold.is_finite() { json!(p.threshold) } else { Value::Null };
                    json!({ "threshold": threshold, "fpr": p.fpr, "tpr": p.tpr })
                })
                .collect();
            json!({ "class": class, "auc": m.auc, "points": points })
        })
        .collect();
    Ok(Json(json!({ "curves": curves })))
}

async fn ablation(State(state): State<AppState>) -> ApiResult<Json<AblationReport>> {
    state
        .shared
        .ablation
        .read()
        .expect("ablation lock")
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no ablation report"))
}

async fn run_ablation(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult<Json<AblationReport>> {
    let request: AblationRequest = serde_json::from_value(body).map_err(bad_request)?;
    request.config.validate().map_err(bad_request)?;
    let table = load_source(&request.data)?;
    let report = tokio::task::spawn_blocking(move || run_ablations(&table, &request.config, &request.seeds))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(bad_request)?;
    state
        .shared
        .registry
        .save_ablation(&report)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    *state.shared.ablation.write().expect("ablation lock") = Some(report.clone());
    Ok(Json(report))
}

/// All API routes with permissive CORS; `static_dir`, when given, serves
/// everything else.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/train", post(start_training))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/predict", post(predict))
        .route("/api/model", get(model_info))
        .route("/api/metrics", get(metrics))
        .route("/api/roc", get(roc))
        .route("/api/ablation", get(ablation).post(run_ablation))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

/// Port from `APC_PORT`, defaulting to 8080.
pub fn port_from_env() -> u16 {
    std::env::var("APC_PORT")
        .ok()
        .and_then(|p| p.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

pub async fn serve(state: AppState, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
