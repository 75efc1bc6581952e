//! HTTP/JSON front end for the learner.
//!
//! Pipeline endpoints take the same configuration structs as the core
//! harness and read and write files on the server's filesystem. Learner
//! endpoints keep live learners in memory, keyed by id.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

use proto_ocl_core::api::{
    ClassifyRequest, ClassifyResponse, CreateLearnerRequest, ErrorBody, EvalRequest, Health, LearnerInfo,
    SaveCheckpointRequest, SaveCheckpointResponse, SessionRequest, SessionResponse, SweepRequest, SweepResponse,
};
use proto_ocl_core::base_trainer::BaseHeads;
use proto_ocl_core::checkpoint::{accounting, Checkpoint};
use proto_ocl_core::dataio::{read_fvec_with_dim, LabeledFeature};
use proto_ocl_core::evaluation::classify_batch;
use proto_ocl_core::harness::{self, BenchConfig, GenDataConfig, RunConfig, TOOL_NAME, TOOL_VERSION};
use proto_ocl_core::numerics::Rng;
use proto_ocl_core::online::LearnerState;
use proto_ocl_core::{Error, ErrorClass};

const BODY_LIMIT: usize = 256 << 20;

struct Learner {
    state: LearnerState,
    heads: Option<BaseHeads>,
    rng: Rng,
}

#[derive(Clone, Default)]
pub struct AppState {
    learners: Arc<Mutex<HashMap<Uuid, Arc<Mutex<Learner>>>>>,
}

impl AppState {
    fn learner(&self, id: &str) -> Result<Arc<Mutex<Learner>>, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        self.learners
            .lock()
            .expect("learner map poisoned")
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn not_found(id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                code: "learner_not_found".into(),
                message: format!("no learner with id {id}"),
                exit_code: ErrorClass::Usage.exit_code(),
            },
        }
    }

    fn internal(message: String) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                code: "internal".into(),
                message,
                exit_code: ErrorClass::Data.exit_code(),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Usage => StatusCode::BAD_REQUEST,
            ErrorClass::Data => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Numeric => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            body: ErrorBody::from(&e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: "bad_request".into(),
                message: r.body_text(),
                exit_code: ErrorClass::Usage.exit_code(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// `Json` whose rejections use the service's error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` on the blocking pool.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::internal(format!("worker failed: {e}"))),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
    })
}

async fn generate(ApiJson(cfg): ApiJson<GenDataConfig>) -> ApiResult<harness::GenDataReport> {
    blocking(move || Ok(harness::gen_data(&cfg)?)).await
}

async fn base_train(ApiJson(cfg): ApiJson<RunConfig>) -> ApiResult<harness::BaseTrainReport> {
    blocking(move || Ok(harness::base_train(&cfg)?)).await
}

async fn online_run(ApiJson(cfg): ApiJson<RunConfig>) -> ApiResult<harness::RunReport> {
    blocking(move || Ok(harness::online_run(&cfg)?)).await
}

async fn run(ApiJson(cfg): ApiJson<RunConfig>) -> ApiResult<harness::RunReport> {
    blocking(move || Ok(harness::run(&cfg)?)).await
}

async fn sweep(ApiJson(req): ApiJson<SweepRequest>) -> ApiResult<SweepResponse> {
    blocking(move || {
        let rows = harness::sweep(&req.config, req.param, &req.values, req.parallel)?;
        let csv = harness::sweep_csv(&rows);
        if let Some(path) = &req.csv {
            std::fs::write(path, &csv).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(SweepResponse {
            param: req.param,
            rows,
            csv,
        })
    })
    .await
}

async fn bench(ApiJson(cfg): ApiJson<BenchConfig>) -> ApiResult<harness::BenchReport> {
    blocking(move || Ok(harness::bench(&cfg)?)).await
}

async fn eval(ApiJson(req): ApiJson<EvalRequest>) -> ApiResult<harness::EvalReport> {
    blocking(move || Ok(harness::eval(&req.checkpoint, &req.test)?)).await
}

fn info(id: Uuid, l: &Learner) -> LearnerInfo {
    LearnerInfo {
        id: id.to_string(),
        session_index: l.state.session_index,
        classes: l.state.seen_classes(),
        base_classes: l.state.base_classes(),
        feature_dim: l.state.feature_dim(),
        d_hyper: l.state.d_hyper(),
        state_bytes: accounting(&l.state, None).total(),
    }
}

async fn create_learner(
    State(app): State<AppState>,
    ApiJson(req): ApiJson<CreateLearnerRequest>,
) -> Result<(StatusCode, Json<LearnerInfo>), ApiError> {
    let Json(info) = blocking(move || {
        let ck = Checkpoint::load(&req.checkpoint)?;
        let learner = Learner {
            state: ck.state,
            heads: ck.heads,
            rng: Rng::new(req.seed),
        };
        let id = Uuid::new_v4();
        let out = info(id, &learner);
        app.learners
            .lock()
            .expect("learner map poisoned")
            .insert(id, Arc::new(Mutex::new(learner)));
        Ok(out)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_learner(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<LearnerInfo> {
    let learner = app.learner(&id)?;
    let l = learner.lock().expect("learner poisoned");
    Ok(Json(info(Uuid::parse_str(&id).expect("validated"), &l)))
}

async fn delete_learner(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found(&id))?;
    match app.learners.lock().expect("learner map poisoned").remove(&uuid) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}

fn session_samples(req: &SessionRequest, dim: usize) -> Result<Vec<LabeledFeature>, Error> {
    let mut samples = req.samples.clone();
    if let Some(path) = &req.fvec {
        samples.extend(read_fvec_with_dim(path, dim)?.samples);
    }
    if let Some(classes) = &req.classes {
        samples.retain(|s| classes.contains(&s.label));
    }
    Ok(samples)
}

async fn run_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SessionRequest>,
) -> ApiResult<SessionResponse> {
    let learner = app.learner(&id)?;
    blocking(move || {
        let mut guard = learner.lock().expect("learner poisoned");
        let l = &mut *guard;
        let samples = session_samples(&req, l.state.feature_dim())?;
        // Work on a copy so a failed session leaves the learner untouched.
        let mut state = l.state.clone();
        let mut rng = l.rng.clone();
        let outcome = state.run_session(&samples, &req.online, &mut rng)?;
        l.state = state;
        l.rng = rng;
        Ok(SessionResponse {
            session_index: outcome.session_index,
            new_classes: outcome.absorbed.new_classes,
            samples: outcome.absorbed.samples,
            loss_trace: outcome.loss_trace,
            state_bytes: accounting(&l.state, None).total(),
        })
    })
    .await
}

async fn classify(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ClassifyRequest>,
) -> ApiResult<ClassifyResponse> {
    let learner = app.learner(&id)?;
    blocking(move || {
        let l = learner.lock().expect("learner poisoned");
        let queries: Vec<LabeledFeature> = req.features.into_iter().map(|f| LabeledFeature::new(0, f)).collect();
        Ok(ClassifyResponse {
            labels: classify_batch(&l.state, &queries)?,
        })
    })
    .await
}

async fn save_checkpoint(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SaveCheckpointRequest>,
) -> ApiResult<SaveCheckpointResponse> {
    let learner = app.learner(&id)?;
    blocking(move || {
        let l = learner.lock().expect("learner poisoned");
        let bytes = Checkpoint::new(l.state.clone(), l.heads.clone()).save(&req.path)?;
        Ok(SaveCheckpointResponse {
            path: PathBuf::from(&req.path),
            bytes,
        })
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/datasets/generate", post(generate))
        .route("/v1/base-train", post(base_train))
        .route("/v1/online-run", post(online_run))
        .route("/v1/runs", post(run))
        .route("/v1/sweeps", post(sweep))
        .route("/v1/bench", post(bench))
        .route("/v1/eval", post(eval))
        .route("/v1/learners", post(create_learner))
        .route("/v1/learners/{id}", get(get_learner).delete(delete_learner))
        .route("/v1/learners/{id}/sessions", post(run_session))
        .route("/v1/learners/{id}/classify", post(classify))
        .route("/v1/learners/{id}/checkpoint", post(save_checkpoint))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(AppState::default()))
        .with_graceful_shutdown(shutdown)
        .await
}
