//! End-to-end pipelines behind the command-line tool and the service.

mod bench;
mod sweep;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::base_trainer::{train_base, BaseTrainConfig, ProjectionConfig, StepLoss};
use crate::calibration::CalibrationConfig;
use crate::checkpoint::Checkpoint;
use crate::dataio::{gen_synthetic, make_partition_over, read_fvec, write_fvec, DatasetMeta, LabeledFeature, PartitionPlan, PartitionSpec};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, overhead_report, Metrics, OverheadReport};
use crate::numerics::Rng;
use crate::online::{LearnerState, OnlineConfig};

pub use bench::{bench, BenchConfig, BenchEntry, BenchReport};
pub use sweep::{sweep, sweep_csv, thread_cap, SweepParam, SweepRow, SWEEP_CSV_HEADER, THREADS_ENV};

pub const TOOL_NAME: &str = "proto-ocl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed offset for the online-phase sampler, so it never replays the base
/// trainer's stream.
const ONLINE_STREAM: u64 = 0x6f6e_6c69_6e65;

/// Gaussian-mixture dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            dim: 64,
            train_per_class: 100,
            test_per_class: 50,
            separation: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Used when `train`/`test` are absent.
    pub synthetic: Option<SyntheticSpec>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// `B+SxN` in percent of the training classes.
    pub partition: String,
    pub calibration: CalibrationConfig,
    pub base: BaseTrainConfig,
    pub projection: ProjectionConfig,
    pub online: OnlineConfig,
    /// Drives the partition shuffle, base initialisation and online sampling.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            test: None,
            synthetic: None,
            checkpoint: None,
            report: None,
            partition: "60+2x20".into(),
            calibration: CalibrationConfig::default(),
            base: BaseTrainConfig::default(),
            projection: ProjectionConfig::default(),
            online: OnlineConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Copies the top-level seed into the base trainer and validates.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.base.seed = cfg.seed;
        cfg.partition_spec()?;
        cfg.calibration.validate()?;
        cfg.base.validate()?;
        cfg.online.validate()?;
        if cfg.projection.d_hyper == 0 || cfg.projection.hidden.contains(&0) {
            return Err(Error::Config("projection widths must be positive".into()));
        }
        match (&cfg.train, &cfg.test, &cfg.synthetic) {
            (Some(_), Some(_), _) | (None, None, Some(_)) => Ok(cfg),
            _ => Err(Error::Config("give both train and test files, or a synthetic spec".into())),
        }
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        self.partition.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub train: Vec<LabeledFeature>,
    pub test: Vec<LabeledFeature>,
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match (&cfg.train, &cfg.test, &cfg.synthetic) {
        (Some(train), Some(test), _) => {
            let train = read_fvec(train)?;
            let test = read_fvec(test)?;
            if train.dim != test.dim {
                return Err(crate::error::FvecError::DimMismatch {
                    header: train.dim,
                    sample: test.dim,
                }
                .into());
            }
            Ok(Dataset {
                dim: train.dim,
                train: train.samples,
                test: test.samples,
            })
        }
        (None, None, Some(s)) => {
            let d = gen_synthetic(s.classes, s.dim, s.train_per_class, s.test_per_class, s.separation, s.seed)?;
            Ok(Dataset {
                dim: d.dim,
                train: d.train,
                test: d.test,
            })
        }
        _ => Err(Error::Config("give both train and test files, or a synthetic spec".into())),
    }
}

/// Partition over the distinct training labels.
pub fn plan_for(cfg: &RunConfig, data: &Dataset) -> Result<PartitionPlan> {
    let classes: BTreeSet<u32> = data.train.iter().map(|s| s.label).collect();
    let classes: Vec<u32> = classes.into_iter().collect();
    make_partition_over(&classes, cfg.partition_spec()?, cfg.seed)
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn subset<'a>(samples: &'a [LabeledFeature], classes: &BTreeSet<u32>) -> Vec<&'a LabeledFeature> {
    samples.iter().filter(|s| classes.contains(&s.label)).collect()
}

fn evaluate_on(state: &LearnerState, test: &[LabeledFeature]) -> Result<Metrics> {
    let seen: BTreeSet<u32> = state.classes.keys().copied().collect();
    let samples: Vec<LabeledFeature> = subset(test, &seen).into_iter().cloned().collect();
    evaluate(state, &samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSummary {
    pub classes: Vec<u32>,
    pub samples: usize,
    pub epoch_losses: Vec<StepLoss>,
    /// Accuracy over the base classes' test samples.
    pub metrics: Metrics,
    pub wall_ms: u64,
    pub checkpoint_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: u32,
    pub classes: Vec<u32>,
    pub samples: u64,
    pub loss_trace: Vec<f64>,
    pub batch_losses: Vec<f64>,
    /// Accuracy over the test samples of every class seen so far.
    pub metrics: Metrics,
    pub wall_ms: u64,
    pub state_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub tool_version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub config: RunConfig,
    pub partition: PartitionPlan,
    /// Absent when the run started from an existing checkpoint.
    pub base: Option<BaseSummary>,
    pub sessions: Vec<SessionRecord>,
    pub final_metrics: Metrics,
    pub overhead: OverheadReport,
}

impl RunReport {
    /// The report with every timestamp and wall-clock field zeroed.
    pub fn canonical(&self) -> Self {
        let mut r = self.clone();
        r.started_unix_ms = 0;
        r.finished_unix_ms = 0;
        if let Some(b) = &mut r.base {
            b.wall_ms = 0;
        }
        for s in &mut r.sessions {
            s.wall_ms = 0;
        }
        r.overhead.base_train_ms = 0;
        r.overhead.online_total_ms = 0;
        r.overhead.session_ms.iter_mut().for_each(|t| *t = 0);
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTrainReport {
    pub tool: String,
    pub tool_version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub config: RunConfig,
    pub partition: PartitionPlan,
    pub base: BaseSummary,
    pub checkpoint: Option<PathBuf>,
}

/// Trains the base session and returns the checkpoint as it would be
/// reloaded from disk.
pub fn base_phase(cfg: &RunConfig, data: &Dataset, plan: &PartitionPlan) -> Result<(Checkpoint, BaseSummary)> {
    let t = Instant::now();
    let base_set: BTreeSet<u32> = plan.base_classes.iter().copied().collect();
    let train: Vec<LabeledFeature> = subset(&data.train, &base_set).into_iter().cloned().collect();
    let model = train_base(&train, &plan.base_classes, &cfg.base, &cfg.projection, &cfg.calibration)?;
    let epoch_losses = model.epoch_losses.clone();
    let heads = model.heads.clone();
    let state = LearnerState::from_base(model, cfg.calibration)?;
    let checkpoint = Checkpoint::new(state, Some(heads)).quantized();
    let wall_ms = elapsed_ms(t);
    let metrics = evaluate_on(&checkpoint.state, &data.test)?;
    let mut classes = plan.base_classes.clone();
    classes.sort_unstable();
    let summary = BaseSummary {
        classes,
        samples: train.len(),
        epoch_losses,
        metrics,
        wall_ms,
        checkpoint_bytes: checkpoint.accounting().total(),
    };
    Ok((checkpoint, summary))
}

/// Runs every incremental session of `plan` from `checkpoint`.
pub fn online_phase(
    cfg: &RunConfig,
    data: &Dataset,
    plan: &PartitionPlan,
    checkpoint: Checkpoint,
) -> Result<(LearnerState, Vec<SessionRecord>, usize)> {
    let mut ck_base = checkpoint.state.base_classes();
    ck_base.sort_unstable();
    let mut plan_base = plan.base_classes.clone();
    plan_base.sort_unstable();
    if ck_base != plan_base {
        return Err(Error::Config(
            "checkpoint base classes do not match the partition's base classes".into(),
        ));
    }
    if checkpoint.state.feature_dim() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: checkpoint.state.feature_dim(),
            found: data.dim,
        });
    }
    let head_params = checkpoint
        .heads
        .as_ref()
        .map_or(0, |h| h.vp.net.param_count() + h.hp.net.param_count());
    let mut state = checkpoint.state;
    let mut rng = Rng::new(cfg.seed ^ ONLINE_STREAM);
    let mut records = Vec::with_capacity(plan.sessions.len());
    for classes in &plan.sessions {
        let set: BTreeSet<u32> = classes.iter().copied().collect();
        let t = Instant::now();
        let outcome = state.run_session(subset(&data.train, &set), &cfg.online, &mut rng)?;
        let wall_ms = elapsed_ms(t);
        let metrics = evaluate_on(&state, &data.test)?;
        let mut classes = classes.clone();
        classes.sort_unstable();
        records.push(SessionRecord {
            session: outcome.session_index,
            classes,
            samples: outcome.absorbed.samples,
            loss_trace: outcome.loss_trace,
            batch_losses: outcome.batch_losses,
            metrics,
            wall_ms,
            state_bytes: crate::checkpoint::accounting(&state, None).total(),
        });
    }
    Ok((state, records, head_params))
}

fn finish_report(
    cfg: RunConfig,
    plan: PartitionPlan,
    base: Option<BaseSummary>,
    state: &LearnerState,
    sessions: Vec<SessionRecord>,
    head_params: usize,
    data: &Dataset,
    started: u64,
) -> Result<RunReport> {
    let final_metrics = match sessions.last() {
        Some(s) => s.metrics.clone(),
        None => evaluate_on(state, &data.test)?,
    };
    let base_ms = base.as_ref().map_or(0, |b| b.wall_ms);
    let overhead = overhead_report(state, head_params, base_ms, sessions.iter().map(|s| s.wall_ms).collect());
    Ok(RunReport {
        tool: TOOL_NAME.into(),
        tool_version: TOOL_VERSION.into(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        config: cfg,
        partition: plan,
        base,
        sessions,
        final_metrics,
        overhead,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Base training, then every session, on already loaded data. Writes
/// nothing.
pub fn run_with_data(cfg: &RunConfig, data: &Dataset) -> Result<RunReport> {
    let started = unix_ms();
    let cfg = cfg.resolved()?;
    let plan = plan_for(&cfg, data)?;
    let (checkpoint, base) = base_phase(&cfg, data, &plan)?;
    let (state, sessions, head_params) = online_phase(&cfg, data, &plan, checkpoint)?;
    finish_report(cfg, plan, Some(base), &state, sessions, head_params, data, started)
}

/// End-to-end run. Writes the report when `cfg.report` is set.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let resolved = cfg.resolved()?;
    let data = load_data(&resolved)?;
    let report = run_with_data(&resolved, &data)?;
    if let Some(path) = &resolved.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

/// Base session only. Writes the checkpoint when `cfg.checkpoint` is set
/// and the report when `cfg.report` is set.
pub fn base_train(cfg: &RunConfig) -> Result<BaseTrainReport> {
    let started = unix_ms();
    let cfg = cfg.resolved()?;
    let data = load_data(&cfg)?;
    let plan = plan_for(&cfg, &data)?;
    let (checkpoint, base) = base_phase(&cfg, &data, &plan)?;
    if let Some(path) = &cfg.checkpoint {
        checkpoint.save(path)?;
    }
    let report = BaseTrainReport {
        tool: TOOL_NAME.into(),
        tool_version: TOOL_VERSION.into(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        checkpoint: cfg.checkpoint.clone(),
        config: cfg,
        partition: plan,
        base,
    };
    if let Some(path) = &report.config.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

/// Every incremental session, starting from `cfg.checkpoint`.
pub fn online_run(cfg: &RunConfig) -> Result<RunReport> {
    let started = unix_ms();
    let cfg = cfg.resolved()?;
    let path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("online run needs a checkpoint".into()))?;
    let checkpoint = Checkpoint::load(&path)?;
    let data = load_data(&cfg)?;
    let plan = plan_for(&cfg, &data)?;
    let (state, sessions, head_params) = online_phase(&cfg, &data, &plan, checkpoint)?;
    let report = finish_report(cfg, plan, None, &state, sessions, head_params, &data, started)?;
    if let Some(path) = &report.config.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
    pub metrics: Metrics,
    /// Test samples whose class the checkpoint has not seen.
    pub skipped: usize,
    pub state_bytes: u64,
}

/// Scores a checkpoint on a test file, restricted to the classes it knows.
pub fn eval(checkpoint: &Path, test: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = read_fvec(test)?;
    if data.dim != ck.state.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: ck.state.feature_dim(),
            found: data.dim,
        });
    }
    let seen: BTreeSet<u32> = ck.state.classes.keys().copied().collect();
    let known: Vec<LabeledFeature> = subset(&data.samples, &seen).into_iter().cloned().collect();
    let metrics = evaluate(&ck.state, &known)?;
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        test: test.to_path_buf(),
        metrics,
        skipped: data.samples.len() - known.len(),
        state_bytes: crate::checkpoint::accounting(&ck.state, None).total(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataReport {
    pub train: PathBuf,
    pub test: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub dim: usize,
}

/// Writes `train.fvec` and `test.fvec` (with sidecars) into `cfg.out`.
pub fn gen_data(cfg: &GenDataConfig) -> Result<GenDataReport> {
    let s = &cfg.spec;
    let data = gen_synthetic(s.classes, s.dim, s.train_per_class, s.test_per_class, s.separation, s.seed)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(format!("creating {}", cfg.out.display()), e))?;
    let train = cfg.out.join("train.fvec");
    let test = cfg.out.join("test.fvec");
    for (path, samples, split) in [(&train, &data.train, "train"), (&test, &data.test, "test")] {
        write_fvec(path, data.dim, samples)?;
        let mut extra = serde_json::Map::new();
        extra.insert("synthetic".into(), serde_json::to_value(s)?);
        DatasetMeta {
            source: "synthetic".into(),
            backbone: "none".into(),
            split: Some(split.into()),
            class_names: (0..s.classes).map(|c| format!("class_{c}")).collect(),
            extra,
        }
        .write_for(path)?;
    }
    Ok(GenDataReport {
        train,
        test,
        train_count: data.train.len(),
        test_count: data.test.len(),
        dim: data.dim,
    })
}
