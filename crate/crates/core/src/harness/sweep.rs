use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_data, run_with_data, Dataset, RunConfig};
use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "PROTO_OCL_THREADS";
pub const SWEEP_CSV_HEADER: &str = "value,acc_all,acc_base,acc_novel,hm,time_ms,state_bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "T")]
    Iterations,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "k_base")]
    KBase,
    #[serde(rename = "k_novel")]
    KNovel,
    #[serde(rename = "dh")]
    DHyper,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Lambda,
        SweepParam::Iterations,
        SweepParam::K,
        SweepParam::KBase,
        SweepParam::KNovel,
        SweepParam::DHyper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Iterations => "T",
            SweepParam::K => "K",
            SweepParam::KBase => "k_base",
            SweepParam::KNovel => "k_novel",
            SweepParam::DHyper => "dh",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = cfg.clone();
        if self == SweepParam::Lambda {
            cfg.calibration.lambda = value;
            return Ok(cfg);
        }
        if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
            return Err(Error::Config(format!("{} takes positive integers, got {value}", self.name())));
        }
        let n = value as usize;
        match self {
            SweepParam::Iterations => cfg.online.iterations = n,
            SweepParam::K => cfg.online.k_per_class = n,
            SweepParam::KBase => cfg.online.k_base = Some(n),
            SweepParam::KNovel => cfg.online.k_novel = Some(n),
            SweepParam::DHyper => cfg.projection.d_hyper = n,
            SweepParam::Lambda => unreachable!(),
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" | "λ" => Ok(SweepParam::Lambda),
            "T" | "t" | "iterations" => Ok(SweepParam::Iterations),
            "K" | "k" => Ok(SweepParam::K),
            "k_base" | "K_base" => Ok(SweepParam::KBase),
            "k_novel" | "K_novel" => Ok(SweepParam::KNovel),
            "dh" | "d_hyper" => Ok(SweepParam::DHyper),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected one of lambda, T, K, k_base, k_novel, dh"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub acc_all: f64,
    pub acc_base: f64,
    pub acc_novel: f64,
    pub hm: f64,
    pub time_ms: u64,
    pub state_bytes: u64,
}

/// Upper bound on sweep workers from the environment, if set and positive.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn point(cfg: &RunConfig, param: SweepParam, value: f64, data: &Dataset) -> Result<SweepRow> {
    let mut cfg = param.apply(cfg, value)?;
    cfg.report = None;
    cfg.checkpoint = None;
    let t = Instant::now();
    let report = run_with_data(&cfg, data)?;
    let m = &report.final_metrics;
    Ok(SweepRow {
        value,
        acc_all: m.acc_all,
        acc_base: m.acc_base,
        acc_novel: m.acc_novel,
        hm: m.hm,
        time_ms: t.elapsed().as_millis() as u64,
        state_bytes: report.overhead.state_bytes,
    })
}

/// One independent run per value, in order. At most `parallel` runs (further
/// capped by [`THREADS_ENV`]) execute at once.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], parallel: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let cfg = cfg.resolved()?;
    for &v in values {
        param.apply(&cfg, v)?.resolved()?;
    }
    let data = load_data(&cfg)?;
    let workers = parallel.max(1).min(thread_cap().unwrap_or(usize::MAX)).min(values.len());
    if workers == 1 {
        return values.iter().map(|&v| point(&cfg, param, v, &data)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| values.par_iter().map(|&v| point(&cfg, param, v, &data)).collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.value, r.acc_all, r.acc_base, r.acc_novel, r.hm, r.time_ms, r.state_bytes
        ));
    }
    out
}
