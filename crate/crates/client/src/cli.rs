//! `proto-ocl`: every subcommand is one request to the service.
//!
//! Paths are made absolute before they are sent, since the server resolves
//! them on its own filesystem.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use proto_ocl_core::api::{EvalRequest, SweepRequest};
use proto_ocl_core::harness::{thread_cap, BenchConfig, GenDataConfig, RunConfig, SweepParam, SyntheticSpec};
use proto_ocl_core::projection::LossKind;
use proto_ocl_core::ErrorClass;

use crate::{Client, ClientError, DEFAULT_SERVER, SERVER_ENV};

#[derive(Parser, Debug)]
#[command(name = "proto-ocl", version, about = "Online class-incremental learning with hyperdimensional prototypes")]
pub struct Cli {
    /// Service base URL.
    #[arg(long, global = true, env = SERVER_ENV, default_value = DEFAULT_SERVER)]
    pub server: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic Gaussian-mixture dataset as train/test FVEC files.
    GenData(GenDataArgs),
    /// Train the base session and write a checkpoint.
    BaseTrain(CheckpointRunArgs),
    /// Run every incremental session from a base checkpoint.
    OnlineRun(CheckpointRunArgs),
    /// Base training followed by every incremental session.
    Run(RunOnlyArgs),
    /// One run per value of a hyperparameter; CSV out.
    Sweep(SweepArgs),
    /// Time the online-phase kernels.
    Bench(BenchArgs),
    /// Score a checkpoint on a test file.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub test_per_class: usize,
    /// Expected centre distance in noise standard deviations.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Ce,
    Sc,
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Use a generated dataset (default mixture, seeded by --seed).
    #[arg(long, conflicts_with_all = ["train", "test"])]
    pub synthetic: bool,
    /// Partition as B+SxN in percent, e.g. 60+2x20.
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Bi-level iterations per session.
    #[arg(short = 'T', long)]
    pub iterations: Option<usize>,
    /// Pseudo-features per class and iteration.
    #[arg(short = 'K', long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_base: Option<usize>,
    #[arg(long)]
    pub k_novel: Option<usize>,
    /// Hyperdimensional width.
    #[arg(long)]
    pub dh: Option<usize>,
    /// Hidden widths of the projection, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_inner: Option<f64>,
    #[arg(long)]
    pub lr_outer: Option<f64>,
    /// Keep base-class prototypes fixed during online refinement.
    #[arg(long)]
    pub freeze_base: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CheckpointRunArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunOnlyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// One of lambda, T, K, k_base, k_novel, dh.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub values: Vec<f64>,
    /// Runs in flight at once (capped by PROTO_OCL_THREADS).
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub classes: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 2048)]
    pub dh: usize,
    #[arg(short = 'K', long = "k", default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            code: e.exit_code(),
            message: format!("[{}] {e}", e.code()),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: ErrorClass::Usage.exit_code(),
        message: message.into(),
    }
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| usage(format!("bad path {}: {e}", p.display())))
}

fn absolute_opt(p: &Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
    p.as_deref().map(absolute).transpose()
}

impl RunArgs {
    /// The configuration file (or defaults) with every given flag applied.
    pub fn to_config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure {
                    code: ErrorClass::Data.exit_code(),
                    message: format!("reading {}: {e}", path.display()),
                })?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| usage(format!("parsing {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.train.is_some() || self.test.is_some() {
            cfg.train = self.train.clone();
            cfg.test = self.test.clone();
            cfg.synthetic = None;
        }
        if self.synthetic {
            cfg.train = None;
            cfg.test = None;
            cfg.synthetic = Some(SyntheticSpec {
                seed: cfg.seed,
                ..SyntheticSpec::default()
            });
        }
        cfg.train = absolute_opt(&cfg.train)?;
        cfg.test = absolute_opt(&cfg.test)?;
        cfg.checkpoint = absolute_opt(&cfg.checkpoint)?;
        cfg.report = absolute_opt(&cfg.report)?;
        if let Some(p) = &self.partition {
            cfg.partition = p.clone();
        }
        if let Some(v) = self.lambda {
            cfg.calibration.lambda = v;
        }
        if let Some(v) = self.iterations {
            cfg.online.iterations = v;
        }
        if let Some(v) = self.k {
            cfg.online.k_per_class = v;
        }
        if let Some(v) = self.k_base {
            cfg.online.k_base = Some(v);
        }
        if let Some(v) = self.k_novel {
            cfg.online.k_novel = Some(v);
        }
        if let Some(v) = self.dh {
            cfg.projection.d_hyper = v;
        }
        if let Some(v) = &self.hidden {
            cfg.projection.hidden = v.clone();
        }
        if let Some(v) = self.loss {
            cfg.base.loss_kind = match v {
                LossArg::Ce => LossKind::Ce,
                LossArg::Sc => LossKind::Sc,
            };
        }
        if let Some(v) = self.epochs {
            cfg.base.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.base.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.base.batch_size = v;
        }
        if let Some(v) = self.lr_inner {
            cfg.online.lr_inner = v;
        }
        if let Some(v) = self.lr_outer {
            cfg.online.lr_outer = v;
        }
        if self.freeze_base {
            cfg.online.freeze_base_prototypes = true;
        }
        if cfg.train.is_none() && cfg.test.is_none() && cfg.synthetic.is_none() {
            return Err(usage("give --train and --test, --synthetic, or a --config with a data source"));
        }
        Ok(cfg)
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("response types serialize")
}

/// Runs one parsed command; returns what to print on stdout.
pub async fn execute(cli: Cli) -> Result<String, Failure> {
    let client = Client::new(&cli.server);
    match cli.command {
        Command::GenData(a) => {
            let cfg = GenDataConfig {
                spec: SyntheticSpec {
                    classes: a.classes,
                    dim: a.dim,
                    train_per_class: a.train_per_class,
                    test_per_class: a.test_per_class,
                    separation: a.separation,
                    seed: a.seed,
                },
                out: absolute(&a.out)?,
            };
            Ok(json(&client.gen_data(&cfg).await?))
        }
        Command::BaseTrain(a) => {
            let mut cfg = a.run.to_config()?;
            cfg.checkpoint = Some(absolute(&a.checkpoint)?);
            cfg.report = absolute_opt(&a.report)?;
            let report = client.base_train(&cfg).await?;
            Ok(match &a.report {
                Some(_) => format!("base acc {:.2}", report.base.metrics.acc_all),
                None => json(&report),
            })
        }
        Command::OnlineRun(a) => {
            let mut cfg = a.run.to_config()?;
            cfg.checkpoint = Some(absolute(&a.checkpoint)?);
            cfg.report = absolute_opt(&a.report)?;
            let report = client.online_run(&cfg).await?;
            Ok(summary_or_json(&report, a.report.is_some()))
        }
        Command::Run(a) => {
            let mut cfg = a.run.to_config()?;
            cfg.report = absolute_opt(&a.report)?;
            let report = client.run(&cfg).await?;
            Ok(summary_or_json(&report, a.report.is_some()))
        }
        Command::Sweep(a) => {
            let param: SweepParam = a.param.parse().map_err(|e: proto_ocl_core::Error| usage(e.to_string()))?;
            let mut config = a.run.to_config()?;
            config.report = None;
            let parallel = a.parallel.max(1).min(thread_cap().unwrap_or(usize::MAX));
            let req = SweepRequest {
                config,
                param,
                values: a.values,
                parallel,
                csv: absolute_opt(&a.out)?,
            };
            let resp = client.sweep(&req).await?;
            Ok(match &a.out {
                Some(p) => format!("{} rows written to {}", resp.rows.len(), p.display()),
                None => resp.csv.trim_end().to_string(),
            })
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                classes: a.classes,
                dim: a.dim,
                d_hyper: a.dh,
                k_per_class: a.k,
                queries: a.queries,
                repeats: a.repeats,
                seed: a.seed,
            };
            Ok(json(&client.bench(&cfg).await?))
        }
        Command::Eval(a) => {
            let req = EvalRequest {
                checkpoint: absolute(&a.checkpoint)?,
                test: absolute(&a.test)?,
            };
            Ok(json(&client.eval(&req).await?))
        }
    }
}

fn summary_or_json(report: &proto_ocl_core::harness::RunReport, summary: bool) -> String {
    if summary {
        let m = &report.final_metrics;
        format!(
            "acc {:.2} (base {:.2} / novel {:.2}) hm {:.2} over {} sessions",
            m.acc_all,
            m.acc_base,
            m.acc_novel,
            m.hm,
            report.sessions.len()
        )
    } else {
        json(report)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub async fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ErrorClass::Usage.exit_code() } else { 0 };
        }
    };
    match execute(cli).await {
        Ok(out) => {
            println!("{out}");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
