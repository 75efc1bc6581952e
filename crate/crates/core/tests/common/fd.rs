//! Finite-difference oracles: central differences, h = 1e-5, 1e-4 relative.

use std::collections::BTreeMap;

use super::{max_rel_err, numeric_gradient, numeric_gradient_at};
use proto_ocl_core::calibration::{CalibrationConfig, ClassStats};
use proto_ocl_core::losses::{ce_batch, ce_loss, sup_con_loss};
use proto_ocl_core::numerics::{normalize_in_place, Rng};
use proto_ocl_core::online::{ClassRecord, LearnerState, OnlineConfig};
use proto_ocl_core::projection::{backward, LossHead, LossKind, Matrix, ProjectionModule};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn ce_oracle(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    m + z.ln() - logits[label]
}

/// Supervised contrastive loss written straight from its definition.
fn sup_con_oracle(z: &[Vec<f64>], labels: &[u32], tau: f64) -> f64 {
    let n = z.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let li: f64 = pos
            .iter()
            .map(|&p| -((dot(&z[i], &z[p]) / tau).exp() / denom).ln())
            .sum::<f64>()
            / pos.len() as f64;
        total += li;
        anchors += 1;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

pub fn check_ce(instances: u64) {
    for seed in 0..instances {
        let mut rng = Rng::new(seed);
        let c = 2 + rng.below(6) as usize;
        let logits: Vec<f64> = (0..c).map(|_| 2.0 * rng.standard_normal()).collect();
        let label = rng.below(c as u64) as usize;
        let (loss, grad) = ce_loss(&logits, label).unwrap();
        assert!((loss - ce_oracle(&logits, label)).abs() < 1e-12);
        let num = numeric_gradient(&logits, H, |l| ce_oracle(l, label));
        assert!(max_rel_err(&grad, &num) < TOL, "seed {seed}");

        let b = 5;
        let m = random_matrix(b, c, &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(c as u64) as usize).collect();
        let (_, g) = ce_batch(&m, &labels).unwrap();
        let num = numeric_gradient(m.as_slice(), H, |flat| {
            (0..b).map(|i| ce_oracle(&flat[i * c..(i + 1) * c], labels[i])).sum::<f64>() / b as f64
        });
        assert!(max_rel_err(g.as_slice(), &num) < TOL, "seed {seed}");
    }
}

pub fn check_sup_con(instances: u64) {
    for seed in 0..instances {
        let mut rng = Rng::new(100 + seed);
        let n = 4 + rng.below(4) as usize;
        let d = 3 + rng.below(4) as usize;
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect();
        for r in &mut rows {
            normalize_in_place(r).unwrap();
        }
        let labels: Vec<u32> = (0..n).map(|_| rng.below(3) as u32).collect();
        let tau = 0.1 + rng.next_f64();
        let (loss, grad) = sup_con_loss(&Matrix::from_rows(&rows).unwrap(), &labels, tau).unwrap();
        assert!((loss - sup_con_oracle(&rows, &labels, tau)).abs() < 1e-10, "seed {seed}");
        let flat: Vec<f64> = rows.concat();
        let num = numeric_gradient(&flat, H, |p| {
            let z: Vec<Vec<f64>> = p.chunks(d).map(<[f64]>::to_vec).collect();
            sup_con_oracle(&z, &labels, tau)
        });
        assert!(max_rel_err(grad.as_slice(), &num) < TOL, "seed {seed}");
    }
}

fn head_loss(head: &LossHead, x: &Matrix, labels: &[usize]) -> f64 {
    head.loss(x, labels).unwrap().loss
}

pub fn check_projection_and_heads(instances: u64) {
    for seed in 0..instances {
        for kind in [LossKind::Ce, LossKind::Sc] {
            let mut rng = Rng::new(200 + seed);
            let (d_in, d_hyper, classes, b) = (4, 6, 3, 5);
            let projection = ProjectionModule::init(d_in, &[16], d_hyper, &mut rng).unwrap();
            let mut head = LossHead::new(kind, d_hyper, classes, 0.5, &mut rng).unwrap();
            if kind == LossKind::Ce {
                let p: Vec<f64> = (0..head.net.param_count()).map(|_| rng.standard_normal()).collect();
                head.net.set_flat_params(&p).unwrap();
            }
            let x = random_matrix(b, d_in, &mut rng);
            let labels: Vec<usize> = match kind {
                LossKind::Ce => (0..b).map(|i| i % 2).collect(),
                LossKind::Sc => vec![0, 1, 0, 1, 2],
            };
            let (loss, proj_tape, head_tape) = backward(&projection, &head, &x, &labels).unwrap();
            let z = projection.project_batch(&x).unwrap();
            assert!((loss - head_loss(&head, &z, &labels)).abs() < 1e-12);

            let base = projection.net().flat_params();
            let num = numeric_gradient(&base, H, |p| {
                let mut m = projection.clone();
                m.net_mut().set_flat_params(p).unwrap();
                head_loss(&head, &m.project_batch(&x).unwrap(), &labels)
            });
            let err = max_rel_err(&proj_tape.flat(), &num);
            assert!(err < TOL, "{kind:?} seed {seed}: projection rel err {err}");

            // Includes the row of class 2, which CE never labels. The SC head
            // is checked on a random subset of its coordinates.
            let hp = head.net.flat_params();
            let idx: Vec<usize> = if hp.len() <= 400 {
                (0..hp.len()).collect()
            } else {
                (0..300).map(|_| rng.below(hp.len() as u64) as usize).collect()
            };
            let num = numeric_gradient_at(&hp, &idx, H, |p| {
                let mut h = head.clone();
                h.net.set_flat_params(p).unwrap();
                head_loss(&h, &z, &labels)
            });
            let analytic: Vec<f64> = idx.iter().map(|&i| head_tape.flat()[i]).collect();
            let err = max_rel_err(&analytic, &num);
            assert!(err < TOL, "{kind:?} seed {seed}: head rel err {err}");
        }
    }
}

fn random_state(seed: u64, classes: u32, d_in: usize, d_hyper: usize) -> LearnerState {
    let mut rng = Rng::new(seed);
    let projection = ProjectionModule::init(d_in, &[8], d_hyper, &mut rng).unwrap();
    let mut map = BTreeMap::new();
    for c in 0..classes {
        let mut stats = ClassStats::new(c, d_in);
        for _ in 0..6 {
            let x: Vec<f64> = (0..d_in).map(|j| (c as usize * 3 + j) as f64 * 0.2 + 0.5 * rng.standard_normal()).collect();
            stats.update(&x).unwrap();
        }
        let mut p: Vec<f64> = (0..d_hyper).map(|_| rng.standard_normal()).collect();
        normalize_in_place(&mut p).unwrap();
        map.insert(c, ClassRecord { stats, prototype: p, session: (c % 2) as u32 });
    }
    LearnerState {
        calibration: CalibrationConfig::default(),
        projection,
        classes: map,
        session_index: 1,
    }
}

/// Mean `−log softmax(cos(z, p)/τ)[y]` computed from scratch.
fn cosine_oracle(z: &Matrix, protos: &[Vec<f64>], targets: &[usize], tau: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let zi = z.row(i);
        let logits: Vec<f64> = protos
            .iter()
            .map(|p| zi.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / (norm(zi) * norm(p)) / tau)
            .collect();
        total += ce_oracle(&logits, y);
    }
    total / targets.len() as f64
}

pub fn check_bilevel(instances: u64) {
    let tau = 0.1;
    for seed in 0..instances {
        let state = random_state(300 + seed, 4, 5, 6);
        let cfg = OnlineConfig {
            k_per_class: 2,
            ..OnlineConfig::default()
        };
        let batch = state.sample_pseudo_batch(&cfg, &mut Rng::new(seed)).unwrap();
        let ids: Vec<u32> = state.classes.keys().copied().collect();
        let targets: Vec<usize> = batch.labels.iter().map(|l| ids.iter().position(|c| c == l).unwrap()).collect();
        let features = Matrix::from_rows(&batch.features).unwrap();
        let protos: Vec<Vec<f64>> = state.classes.values().map(|r| r.prototype.clone()).collect();
        let z = state.projection.project_batch(&features).unwrap();
        let obj = state.objective(&batch, tau).unwrap();
        assert!((obj - cosine_oracle(&z, &protos, &targets, tau)).abs() < 1e-10);

        // Inner level: prototypes.
        let (loss, g) = state.prototype_gradient(&batch, tau).unwrap();
        assert_eq!(loss, obj);
        let num = numeric_gradient(&protos.concat(), H, |p| {
            let ps: Vec<Vec<f64>> = p.chunks(6).map(<[f64]>::to_vec).collect();
            cosine_oracle(&z, &ps, &targets, tau)
        });
        let err = max_rel_err(g.as_slice(), &num);
        assert!(err < TOL, "seed {seed}: prototype rel err {err}");

        // Outer level: projection.
        let (_, tape) = state.projection_gradient(&batch, tau).unwrap();
        let num = numeric_gradient(&state.projection.net().flat_params(), H, |p| {
            let mut m = state.projection.clone();
            m.net_mut().set_flat_params(p).unwrap();
            cosine_oracle(&m.project_batch(&features).unwrap(), &protos, &targets, tau)
        });
        let err = max_rel_err(&tape.flat(), &num);
        assert!(err < TOL, "seed {seed}: projection rel err {err}");
    }
}
