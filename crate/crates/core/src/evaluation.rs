//! Prototype classification and the accuracy / harmonic-accuracy metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::calibration::power_transform_in_place;
use crate::checkpoint::{accounting, StateAccounting};
use crate::dataio::LabeledFeature;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm};
use crate::online::LearnerState;
use crate::projection::Matrix;

/// Percentages in `[0, 100]`, unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_all: f64,
    pub acc_base: f64,
    pub acc_novel: f64,
    pub hm: f64,
    pub per_class_acc: BTreeMap<u32, f64>,
    pub n_base_classes: usize,
    pub n_novel_classes: usize,
    pub n_samples: usize,
}

/// `2ab/(a+b)`, or 0 when `a + b` is not positive.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Nearest prototype by cosine similarity; ties go to the smaller class id.
pub fn classify(state: &LearnerState, x: &LabeledFeature) -> Result<u32> {
    Ok(classify_batch(state, std::slice::from_ref(x))?[0])
}

const EVAL_CHUNK: usize = 512;

/// [`classify`] over many samples, projecting in chunks.
pub fn classify_batch(state: &LearnerState, samples: &[LabeledFeature]) -> Result<Vec<u32>> {
    if state.classes.is_empty() {
        return Err(Error::Empty("prototype bank"));
    }
    let d_in = state.feature_dim();
    let protos: Vec<(u32, &[f64], f64)> = state
        .classes
        .iter()
        .map(|(&c, r)| (c, r.prototype.as_slice(), norm(&r.prototype)))
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let mut flat = Vec::with_capacity(chunk.len() * d_in);
        for s in chunk {
            if s.features.len() != d_in {
                return Err(Error::DimensionMismatch {
                    expected: d_in,
                    found: s.features.len(),
                });
            }
            let start = flat.len();
            flat.extend_from_slice(&s.features);
            power_transform_in_place(&mut flat[start..], &state.calibration)?;
        }
        let z = state.projection.project_batch(&Matrix::from_vec(chunk.len(), d_in, flat)?)?;
        for row in z.iter_rows() {
            out.push(nearest_prototype(row, &protos)?);
        }
    }
    Ok(out)
}

fn nearest_prototype(z: &[f64], protos: &[(u32, &[f64], f64)]) -> Result<u32> {
    let zn = norm(z);
    if zn == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut best = (protos[0].0, f64::NEG_INFINITY);
    for &(c, p, pn) in protos {
        let cos = (dot(z, p) / (zn * pn)).clamp(-1.0, 1.0);
        if cos > best.1 {
            best = (c, cos);
        }
    }
    Ok(best.0)
}

/// Per-class accuracy averaged within the base and novel groups; overall
/// accuracy over samples.
pub fn compute_metrics(preds: &[u32], labels: &[u32], base_set: &BTreeSet<u32>) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut correct_all = 0usize;
    for (&p, &y) in preds.iter().zip(labels) {
        let t = tally.entry(y).or_insert((0, 0));
        t.1 += 1;
        if p == y {
            t.0 += 1;
            correct_all += 1;
        }
    }
    let per_class_acc: BTreeMap<u32, f64> = tally
        .iter()
        .map(|(&c, &(ok, n))| (c, 100.0 * ok as f64 / n as f64))
        .collect();
    let group = |is_base: bool| {
        let accs: Vec<f64> = per_class_acc
            .iter()
            .filter(|(c, _)| base_set.contains(c) == is_base)
            .map(|(_, &a)| a)
            .collect();
        let mean = if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        };
        (mean, accs.len())
    };
    let (acc_base, n_base_classes) = group(true);
    let (acc_novel, n_novel_classes) = group(false);
    Ok(Metrics {
        acc_all: 100.0 * correct_all as f64 / labels.len() as f64,
        acc_base,
        acc_novel,
        hm: harmonic_mean(acc_base, acc_novel),
        per_class_acc,
        n_base_classes,
        n_novel_classes,
        n_samples: labels.len(),
    })
}

/// Classifies `test` and scores it against the state's own base classes.
pub fn evaluate(state: &LearnerState, test: &[LabeledFeature]) -> Result<Metrics> {
    let preds = classify_batch(state, test)?;
    let labels: Vec<u32> = test.iter().map(|s| s.label).collect();
    let base: BTreeSet<u32> = state.base_classes().into_iter().collect();
    let metrics = compute_metrics(&preds, &labels, &base)?;
    if ![metrics.acc_all, metrics.acc_base, metrics.acc_novel, metrics.hm]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("metrics"));
    }
    Ok(metrics)
}

/// Time and memory accounting for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub base_train_ms: u64,
    pub session_ms: Vec<u64>,
    pub online_total_ms: u64,
    pub state_bytes: u64,
    pub accounting: StateAccounting,
    pub projection_params: usize,
    pub head_params: usize,
    /// Projection parameters plus one prototype per class.
    pub online_trainable_values: usize,
}

pub fn overhead_report(state: &LearnerState, head_params: usize, base_train_ms: u64, session_ms: Vec<u64>) -> OverheadReport {
    let acc = accounting(state, None);
    OverheadReport {
        base_train_ms,
        online_total_ms: session_ms.iter().sum(),
        session_ms,
        state_bytes: acc.total(),
        accounting: acc,
        projection_params: state.projection.param_count(),
        head_params,
        online_trainable_values: state.trainable_values(),
    }
}
