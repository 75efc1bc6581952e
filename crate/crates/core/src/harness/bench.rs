use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationConfig, ClassStats};
use crate::checkpoint::accounting;
use crate::dataio::LabeledFeature;
use crate::error::Result;
use crate::evaluation::classify_batch;
use crate::numerics::{normalize_in_place, Rng};
use crate::online::{ClassRecord, LearnerState, OnlineConfig};
use crate::projection::{Matrix, ProjectionModule, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub classes: usize,
    pub dim: usize,
    pub d_hyper: usize,
    pub k_per_class: usize,
    pub queries: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            classes: 100,
            dim: 512,
            d_hyper: 2048,
            k_per_class: 20,
            queries: 1000,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    /// Items processed per repeat.
    pub items: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub entries: Vec<BenchEntry>,
    pub state_bytes: u64,
    pub online_trainable_values: usize,
}

fn time<F: FnMut() -> Result<()>>(name: &str, items: usize, repeats: usize, mut f: F) -> Result<BenchEntry> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchEntry {
        name: name.into(),
        items,
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Times the online-phase kernels on a randomly initialised learner.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut rng = Rng::new(cfg.seed);
    let projection = ProjectionModule::init(cfg.dim, &[DEFAULT_HIDDEN], cfg.d_hyper, &mut rng)?;
    let mut classes = BTreeMap::new();
    for c in 0..cfg.classes as u32 {
        let mut stats = ClassStats::new(c, cfg.dim);
        for _ in 0..3 {
            let x: Vec<f64> = (0..cfg.dim).map(|_| rng.next_f64()).collect();
            stats.update(&x)?;
        }
        let mut prototype: Vec<f64> = (0..cfg.d_hyper).map(|_| rng.standard_normal()).collect();
        normalize_in_place(&mut prototype)?;
        classes.insert(c, ClassRecord { stats, prototype, session: u32::from(c >= cfg.classes as u32 / 2) });
    }
    let mut state = LearnerState {
        calibration: CalibrationConfig::default(),
        projection,
        classes,
        session_index: 1,
    };
    let online = OnlineConfig {
        iterations: 1,
        k_per_class: cfg.k_per_class,
        ..OnlineConfig::default()
    };
    let queries: Vec<LabeledFeature> = (0..cfg.queries)
        .map(|i| LabeledFeature::new((i % cfg.classes.max(1)) as u32, (0..cfg.dim).map(|_| rng.next_f64()).collect()))
        .collect();
    let batch_x = Matrix::from_rows(&queries.iter().map(|q| q.features.as_slice()).collect::<Vec<_>>())?;
    let n_pseudo = cfg.classes * cfg.k_per_class;

    let mut entries = Vec::new();
    entries.push(time("project_batch", cfg.queries, cfg.repeats, || {
        state.projection.project_batch(&batch_x).map(|_| ())
    })?);
    entries.push(time("sample_pseudo_batch", n_pseudo, cfg.repeats, || {
        state.sample_pseudo_batch(&online, &mut rng).map(|_| ())
    })?);
    entries.push(time("bilevel_iteration", n_pseudo, cfg.repeats, || {
        state.bilevel_optimize(&online, &mut rng).map(|_| ())
    })?);
    entries.push(time("classify", cfg.queries, cfg.repeats, || classify_batch(&state, &queries).map(|_| ()))?);
    Ok(BenchReport {
        config: cfg.clone(),
        entries,
        state_bytes: accounting(&state, None).total(),
        online_trainable_values: state.trainable_values(),
    })
}
