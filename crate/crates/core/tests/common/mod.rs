#![allow(dead_code)]

pub mod fd;

use proto_ocl_core::base_trainer::{BaseTrainConfig, ProjectionConfig};
use proto_ocl_core::dataio::LabeledFeature;
use proto_ocl_core::harness::{RunConfig, SyntheticSpec};
use proto_ocl_core::online::OnlineConfig;
use proto_ocl_core::projection::LossKind;

/// (setting, acc_base, acc_novel, printed hm) for every printed triple.
pub const HM_TRIPLES: &[(&str, f64, f64, f64)] = &[
    ("40+6x10", 49.3, 25.5, 33.6), ("40+6x10", 59.2, 22.3, 32.4), ("40+6x10", 58.6, 21.8, 31.8),
    ("40+6x10", 62.8, 0.2, 0.4), ("40+6x10", 65.1, 0.6, 1.2), ("40+6x10", 63.4, 0.8, 1.6),
    ("40+6x10", 36.9, 37.5, 37.2), ("40+6x10", 38.9, 38.6, 38.7), ("40+6x10", 34.2, 31.7, 32.9), ("40+6x10", 36.9, 33.6, 35.2), ("40+6x10", 29.1, 30.3, 29.7), ("40+6x10", 39.2, 34.4, 36.6),
    ("40+6x10", 45.2, 26.8, 33.6), ("40+6x10", 49.8, 29.6, 37.1), ("40+6x10", 50.8, 26.8, 35.1), ("40+6x10", 43.2, 26.1, 32.5), ("40+6x10", 50.8, 27.5, 35.7),
    ("40+6x10", 37.5, 37.6, 37.5), ("40+6x10", 40.5, 38.9, 39.7), ("40+6x10", 32.9, 30.8, 31.8), ("40+6x10", 36.1, 37.8, 36.9), ("40+6x10", 30.8, 31.6, 31.2), ("40+6x10", 32.9, 30.9, 31.9),
    ("40+6x10", 43.1, 30.9, 36.0), ("40+6x10", 51.2, 28.7, 36.8),
    ("40+6x10", 39.8, 38.0, 38.9), ("40+6x10", 30.0, 29.8, 29.9), ("40+6x10", 29.9, 29.6, 29.7), ("40+6x10", 35.6, 31.8, 33.6),
    ("40+6x10", 45.8, 30.6, 36.7), ("40+6x10", 45.1, 33.1, 38.2), ("40+6x10", 43.6, 24.7, 31.5), ("40+6x10", 46.5, 29.8, 36.3), ("40+6x10", 38.5, 28.6, 32.8),
    ("40+6x10", 44.2, 46.4, 45.3), ("40+6x10", 43.8, 35.2, 39.0), ("40+6x10", 55.4, 30.4, 39.3),
    ("80+2x10", 48.2, 30.6, 37.4), ("80+2x10", 57.2, 23.8, 33.6), ("80+2x10", 56.4, 26.1, 35.7),
    ("80+2x10", 60.3, 0.6, 1.2), ("80+2x10", 62.8, 0.8, 1.6), ("80+2x10", 62.0, 0.9, 1.8),
    ("80+2x10", 43.5, 40.8, 42.1), ("80+2x10", 42.2, 34.7, 38.1), ("80+2x10", 47.2, 42.8, 44.9), ("80+2x10", 40.6, 39.7, 40.1), ("80+2x10", 43.8, 47.3, 45.5),
    ("80+2x10", 48.9, 31.2, 38.1), ("80+2x10", 50.6, 34.8, 41.2), ("80+2x10", 53.2, 33.4, 41.0), ("80+2x10", 45.2, 32.8, 38.0),
    ("80+2x10", 43.6, 41.8, 42.7), ("80+2x10", 39.8, 40.6, 40.2), ("80+2x10", 43.9, 42.3, 43.1), ("80+2x10", 38.9, 41.8, 40.3),
    ("80+2x10", 49.8, 39.7, 44.2), ("80+2x10", 48.8, 35.1, 40.8), ("80+2x10", 51.8, 36.3, 42.7), ("80+2x10", 46.1, 36.3, 40.6), ("80+2x10", 48.6, 37.2, 42.1),
    ("80+2x10", 42.8, 43.8, 43.3), ("80+2x10", 45.8, 42.8, 44.2), ("80+2x10", 38.6, 42.5, 40.5), ("80+2x10", 39.7, 41.9, 40.8), ("80+2x10", 42.6, 37.4, 39.8), ("80+2x10", 45.6, 44.8, 45.2),
    ("80+2x10", 50.3, 39.0, 43.9), ("80+2x10", 53.7, 36.9, 43.7), ("80+2x10", 41.6, 38.9, 40.2), ("80+2x10", 43.9, 36.4, 39.8), ("80+2x10", 48.6, 31.9, 38.5),
    ("80+2x10", 55.6, 53.7, 54.6), ("80+2x10", 56.2, 46.8, 51.1), ("80+2x10", 52.6, 50.8, 51.7),
    ("60+2x20", 46.2, 29.5, 36.0), ("60+2x20", 53.5, 25.9, 34.9), ("60+2x20", 51.4, 25.7, 34.3),
    ("60+2x20", 58.3, 0.8, 1.6), ("60+2x20", 62.6, 1.0, 2.0), ("60+2x20", 61.2, 1.1, 2.2),
    ("60+2x20", 37.2, 40.6, 38.8), ("60+2x20", 39.2, 37.6, 38.4), ("60+2x20", 38.8, 34.1, 36.3), ("60+2x20", 42.8, 37.6, 40.0), ("60+2x20", 34.6, 34.2, 34.4), ("60+2x20", 38.6, 29.8, 33.6),
    ("60+2x20", 42.4, 27.9, 33.7), ("60+2x20", 49.8, 28.6, 36.3), ("60+2x20", 49.2, 22.8, 31.2), ("60+2x20", 52.8, 23.7, 32.7), ("60+2x20", 43.2, 30.0, 35.4), ("60+2x20", 43.7, 33.2, 37.7),
    ("60+2x20", 38.8, 37.6, 38.2), ("60+2x20", 42.1, 39.6, 40.8), ("60+2x20", 36.5, 35.9, 36.2), ("60+2x20", 42.7, 39.6, 41.1), ("60+2x20", 35.2, 37.1, 36.1), ("60+2x20", 43.7, 33.2, 37.7),
    ("60+2x20", 43.1, 29.7, 35.2), ("60+2x20", 47.9, 36.4, 41.4), ("60+2x20", 45.7, 30.7, 36.7), ("60+2x20", 45.9, 33.4, 38.7),
    ("60+2x20", 37.8, 38.6, 38.2), ("60+2x20", 41.8, 38.6, 40.1), ("60+2x20", 41.6, 38.2, 39.8), ("60+2x20", 32.9, 36.7, 34.7), ("60+2x20", 35.4, 39.6, 37.4),
    ("60+2x20", 45.9, 30.7, 36.8), ("60+2x20", 46.3, 35.0, 39.9), ("60+2x20", 44.8, 34.3, 38.9), ("60+2x20", 38.7, 36.1, 37.4),
    ("60+2x20", 49.1, 50.2, 49.6), ("60+2x20", 51.6, 41.7, 46.1), ("60+2x20", 53.8, 42.1, 47.2),
    ("width", 49.5, 37.9, 42.9), ("width", 53.6, 38.1, 44.5), ("width", 55.4, 41.1, 47.2),
    ("width", 52.4, 42.9, 47.2), ("width", 56.1, 42.6, 48.4), ("width", 52.3, 42.7, 47.0),
];

/// Printed triples whose hm cannot come from the printed base/novel pair.
pub const HM_MISPRINTS: &[(&str, f64, f64, f64)] = &[
    ("40+6x10", 45.2, 21.3, 21.3),
    ("40+6x10", 46.1, 30.6, 36.7), ("40+6x10", 48.2, 21.8, 30.1), ("40+6x10", 50.6, 26.1, 36.8), ("40+6x10", 38.1, 24.9, 31.4),
    ("40+6x10", 36.9, 37.9, 37.3), ("40+6x10", 34.6, 39.0, 36.6), ("40+6x10", 39.4, 26.1, 31.3),
    ("80+2x10", 39.2, 42.9, 40.9), ("80+2x10", 53.7, 33.7, 54.6), ("80+2x10", 49.2, 38.5, 43.5),
    ("80+2x10", 43.8, 42.2, 42.9), ("80+2x10", 42.9, 46.0, 44.3), ("80+2x10", 49.8, 34.8, 40.9), ("80+2x10", 50.8, 36.2, 42.2),
    ("60+2x20", 39.8, 32.2, 35.4), ("60+2x20", 43.5, 38.4, 40.7), ("60+2x20", 37.2, 38.1, 37.7), ("60+2x20", 42.1, 31.4, 35.9), ("60+2x20", 38.9, 29.4, 33.4),
    ("width", 51.8, 40.8, 45.7), ("width", 56.3, 42.6, 48.4),
];

/// (base fraction, acc_all, acc_base, acc_novel).
pub const WEIGHTED_TRIPLES: &[(f64, f64, f64, f64)] = &[
    (0.4, 38.6, 43.8, 35.2),
    (0.8, 54.3, 56.2, 46.8),
    (0.6, 48.6, 52.4, 42.9),
    (0.4, 45.5, 44.2, 46.4),
    (0.4, 40.4, 55.4, 30.4),
    (0.8, 55.2, 55.6, 53.7),
    (0.8, 52.2, 52.6, 50.8),
    (0.6, 49.5, 49.1, 50.2),
    (0.6, 47.6, 51.6, 41.7),
    (0.6, 49.1, 53.8, 42.1),
    (0.6, 45.8, 50.0, 39.6),
    (0.6, 50.7, 56.1, 42.6),
];

pub const TABLE_TOL: f64 = 0.05 + 1e-9;

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let all: Vec<usize> = (0..x.len()).collect();
    numeric_gradient_at(x, &all, h, f)
}

/// Central differences of `f` at `x`, coordinates `idx` only.
pub fn numeric_gradient_at(x: &[f64], idx: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    idx.iter()
        .map(|&i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest entry-wise relative error, with a small absolute floor so that
/// exact zeros compare cleanly.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Nearest class mean over every training class at once.
pub fn joint_ncm_accuracy(train: &[LabeledFeature], test: &[LabeledFeature]) -> f64 {
    let mut sums: std::collections::BTreeMap<u32, (Vec<f64>, usize)> = Default::default();
    for s in train {
        let e = sums.entry(s.label).or_insert_with(|| (vec![0.0; s.features.len()], 0));
        for (a, b) in e.0.iter_mut().zip(&s.features) {
            *a += b;
        }
        e.1 += 1;
    }
    let means: Vec<(u32, Vec<f64>)> = sums
        .into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    let mut correct = 0;
    for s in test {
        let mut best = (f64::INFINITY, u32::MAX);
        for (c, m) in &means {
            let d: f64 = m.iter().zip(&s.features).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, *c);
            }
        }
        if best.1 == s.label {
            correct += 1;
        }
    }
    100.0 * correct as f64 / test.len() as f64
}

/// A seeded run small enough to repeat many times on one core.
pub fn quick_config(seed: u64) -> RunConfig {
    RunConfig {
        synthetic: Some(SyntheticSpec {
            classes: 10,
            dim: 32,
            train_per_class: 60,
            test_per_class: 30,
            separation: 3.0,
            seed: 100 + seed,
        }),
        partition: "60+20x2".into(),
        base: BaseTrainConfig {
            epochs: 10,
            loss_kind: LossKind::Ce,
            ..BaseTrainConfig::default()
        },
        projection: ProjectionConfig {
            d_hyper: 256,
            hidden: vec![128],
        },
        online: OnlineConfig::default(),
        seed,
        ..RunConfig::default()
    }
}
