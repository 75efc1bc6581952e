//! Power-transformed feature statistics and calibrated Gaussian replay.
//!
//! Features are mapped coordinate-wise through `x^λ` before anything else
//! sees them. Each class then keeps only a streaming mean and per-coordinate
//! sum of squared deviations; pseudo-features for replay are drawn from the
//! diagonal Gaussian those statistics describe.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, Rng};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub lambda: f64,
    pub var_floor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            lambda: DEFAULT_LAMBDA,
            var_floor: DEFAULT_VAR_FLOOR,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::Config(format!(
                "var_floor must be positive, got {}",
                self.var_floor
            )));
        }
        Ok(())
    }
}

/// Coordinate-wise `x_i^λ`. Negative coordinates are rejected.
pub fn power_transform(x: &[f64], cfg: &CalibrationConfig) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    power_transform_in_place(&mut out, cfg)?;
    Ok(out)
}

pub fn power_transform_in_place(x: &mut [f64], cfg: &CalibrationConfig) -> Result<()> {
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeFeature { index, value });
    }
    if cfg.lambda == 1.0 {
        return Ok(());
    }
    if cfg.lambda == 0.5 {
        x.iter_mut().for_each(|v| *v = v.sqrt());
    } else {
        x.iter_mut().for_each(|v| *v = v.powf(cfg.lambda));
    }
    Ok(())
}

/// Streaming per-class mean and diagonal variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: u32,
    pub count: u64,
    pub mean: Vec<f64>,
    /// Per-coordinate sum of squared deviations from the running mean.
    pub m2: Vec<f64>,
}

impl ClassStats {
    pub fn new(class_id: u32, dim: usize) -> Self {
        ClassStats {
            class_id,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
        Ok(())
    }

    /// Unbiased variance, or the floor for fewer than two samples.
    pub fn variance(&self, var_floor: f64) -> Vec<f64> {
        if self.count < 2 {
            return vec![var_floor; self.dim()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / denom).max(0.0)).collect()
    }
}

/// `update_stats` in functional form.
pub fn update_stats(mut stats: ClassStats, x_transformed: &[f64]) -> Result<ClassStats> {
    stats.update(x_transformed)?;
    Ok(stats)
}

/// Per-class draw counts for a pseudo-feature batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingPlan {
    /// The same count for every class.
    Balanced(usize),
    /// Separate counts for base-session and later classes.
    Split { k_base: usize, k_novel: usize },
}

impl SamplingPlan {
    pub fn count_for(&self, is_base: bool) -> usize {
        match *self {
            SamplingPlan::Balanced(k) => k,
            SamplingPlan::Split { k_base, k_novel } => {
                if is_base {
                    k_base
                } else {
                    k_novel
                }
            }
        }
    }
}

/// A labelled batch of pseudo-features, grouped by class in bank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoBatch {
    pub labels: Vec<u32>,
    pub features: Vec<Vec<f64>>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, label: u32, feature: Vec<f64>) {
        self.labels.push(label);
        self.features.push(feature);
    }

    pub fn label_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

/// `k_per_class` calibrated draws for every class in `bank`.
pub fn sample_pseudo_features<'a>(
    bank: impl IntoIterator<Item = &'a ClassStats>,
    k_per_class: usize,
    cfg: &CalibrationConfig,
    rng: &mut Rng,
) -> Result<PseudoBatch> {
    if k_per_class == 0 {
        return Err(Error::invalid("k_per_class must be at least 1"));
    }
    sample_with(bank.into_iter().map(|s| (s, k_per_class)), cfg, rng)
}

/// Draws `k` samples per `(stats, k)` entry, in iteration order.
pub fn sample_with<'a>(
    entries: impl IntoIterator<Item = (&'a ClassStats, usize)>,
    cfg: &CalibrationConfig,
    rng: &mut Rng,
) -> Result<PseudoBatch> {
    let mut batch = PseudoBatch::default();
    let mut any = false;
    for (stats, k) in entries {
        any = true;
        if stats.count == 0 {
            return Err(Error::InsufficientSamples {
                class: stats.class_id,
                count: 0,
                required: 1,
            });
        }
        let var = stats.variance(cfg.var_floor);
        for _ in 0..k {
            batch.push(stats.class_id, gaussian_sample(&stats.mean, &var, rng)?);
        }
    }
    if !any {
        return Err(Error::Empty("statistics bank"));
    }
    Ok(batch)
}
