//! Async client for the proto-ocl service, and the `proto-ocl` command line.

pub mod cli;

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use proto_ocl_core::api::{
    ClassifyRequest, ClassifyResponse, CreateLearnerRequest, ErrorBody, EvalRequest, Health, LearnerInfo,
    SaveCheckpointRequest, SaveCheckpointResponse, SessionRequest, SessionResponse, SweepRequest, SweepResponse,
};
use proto_ocl_core::harness::{BaseTrainReport, BenchConfig, BenchReport, EvalReport, GenDataConfig, GenDataReport, RunConfig, RunReport};
use proto_ocl_core::ErrorClass;

pub const SERVER_ENV: &str = "PROTO_OCL_SERVER";
pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach server at {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("{} ({}): {}", .body.code, .status, .body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("unexpected response from server: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Transport { .. } => "server_unreachable",
            ClientError::Api { body, .. } => &body.code,
            ClientError::Decode(_) => "bad_response",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api { body, .. } => body.exit_code,
            _ => ErrorClass::Data.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize, R: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<R> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.http.request(method, &url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => ClientError::Api { status, body },
                Err(_) => ClientError::Decode(format!("{status}: {}", String::from_utf8_lossy(&bytes))),
            });
        }
        let bytes = if bytes.is_empty() { &b"null"[..] } else { &bytes[..] };
        serde_json::from_slice(bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        self.send(Method::POST, path, Some(body)).await
    }

    async fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        self.send::<(), R>(Method::GET, path, None).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/v1/health").await
    }

    pub async fn gen_data(&self, cfg: &GenDataConfig) -> Result<GenDataReport> {
        self.post("/v1/datasets/generate", cfg).await
    }

    pub async fn base_train(&self, cfg: &RunConfig) -> Result<BaseTrainReport> {
        self.post("/v1/base-train", cfg).await
    }

    pub async fn online_run(&self, cfg: &RunConfig) -> Result<RunReport> {
        self.post("/v1/online-run", cfg).await
    }

    pub async fn run(&self, cfg: &RunConfig) -> Result<RunReport> {
        self.post("/v1/runs", cfg).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse> {
        self.post("/v1/sweeps", req).await
    }

    pub async fn bench(&self, cfg: &BenchConfig) -> Result<BenchReport> {
        self.post("/v1/bench", cfg).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalReport> {
        self.post("/v1/eval", req).await
    }

    pub async fn create_learner(&self, req: &CreateLearnerRequest) -> Result<LearnerInfo> {
        self.post("/v1/learners", req).await
    }

    pub async fn learner(&self, id: &str) -> Result<LearnerInfo> {
        self.get(&format!("/v1/learners/{id}")).await
    }

    pub async fn delete_learner(&self, id: &str) -> Result<()> {
        self.send::<(), ()>(Method::DELETE, &format!("/v1/learners/{id}"), None).await
    }

    pub async fn run_session(&self, id: &str, req: &SessionRequest) -> Result<SessionResponse> {
        self.post(&format!("/v1/learners/{id}/sessions"), req).await
    }

    pub async fn classify(&self, id: &str, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        self.post(&format!("/v1/learners/{id}/classify"), req).await
    }

    pub async fn save_checkpoint(&self, id: &str, req: &SaveCheckpointRequest) -> Result<SaveCheckpointResponse> {
        self.post(&format!("/v1/learners/{id}/checkpoint"), req).await
    }
}
