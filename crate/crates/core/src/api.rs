//! Request and response bodies of the HTTP service.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataio::LabeledFeature;
use crate::error::Error;
use crate::harness::{RunConfig, SweepParam, SweepRow};
use crate::online::OnlineConfig;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
            exit_code: e.class().exit_code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub tool: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub config: RunConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub parallel: usize,
    /// Also write the CSV here.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateLearnerRequest {
    pub checkpoint: PathBuf,
    /// Seeds the learner's pseudo-feature sampler.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerInfo {
    pub id: String,
    pub session_index: u32,
    pub classes: Vec<u32>,
    pub base_classes: Vec<u32>,
    pub feature_dim: usize,
    pub d_hyper: usize,
    pub state_bytes: u64,
}

/// Samples for one incremental session, given inline or as an FVEC file
/// filtered to `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    #[serde(default)]
    pub samples: Vec<LabeledFeature>,
    #[serde(default)]
    pub fvec: Option<PathBuf>,
    #[serde(default)]
    pub classes: Option<Vec<u32>>,
    #[serde(default)]
    pub online: OnlineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_index: u32,
    pub new_classes: Vec<u32>,
    pub samples: u64,
    pub loss_trace: Vec<f64>,
    pub state_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaveCheckpointRequest {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaveCheckpointResponse {
    pub path: PathBuf,
    pub bytes: u64,
}
