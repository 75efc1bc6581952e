//! Base-session training.
//!
//! Two heads share the labels: the vanilla head reads calibrated features
//! directly, the hyperdimensional head reads the projection's output. The
//! summed loss trains both heads and the projection. Afterwards one pass
//! over the data records per-class statistics and the two prototype sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{power_transform, CalibrationConfig, ClassStats};
use crate::dataio::LabeledFeature;
use crate::error::{Error, Result};
use crate::numerics::{normalize_in_place, Rng};
use crate::projection::{sgd_step, LossHead, LossKind, Matrix, ProjectionModule, DEFAULT_D_HYPER, DEFAULT_HIDDEN};

pub use crate::losses::{ce_loss, sup_con_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub d_hyper: usize,
    /// Hidden widths between input and output.
    pub hidden: Vec<usize>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            d_hyper: DEFAULT_D_HYPER,
            hidden: vec![DEFAULT_HIDDEN],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseTrainConfig {
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            loss_kind: LossKind::Ce,
            epochs: 50,
            batch_size: 64,
            lr: 0.01,
            temperature: crate::projection::DEFAULT_SC_TEMPERATURE,
            seed: 0,
        }
    }
}

impl BaseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.loss_kind == LossKind::Sc && self.batch_size < 2 {
            return Err(Error::Config("contrastive training needs batch_size >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Vanilla (calibrated-feature mean) and hyperdimensional (unit) prototypes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub vanilla: BTreeMap<u32, Vec<f64>>,
    pub hyper: BTreeMap<u32, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub vp: f64,
    pub hp: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseHeads {
    pub vp: LossHead,
    pub hp: LossHead,
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub projection: ProjectionModule,
    pub heads: BaseHeads,
    /// One entry per base class, ascending class id.
    pub stats: Vec<ClassStats>,
    pub prototypes: PrototypeBank,
    /// Sample-weighted mean loss per epoch.
    pub epoch_losses: Vec<StepLoss>,
    pub step_losses: Vec<StepLoss>,
}

/// Trains on base-class samples. `base_classes` lists every class the
/// session is allowed to contain.
pub fn train_base(
    train_set: &[LabeledFeature],
    base_classes: &[u32],
    cfg: &BaseTrainConfig,
    proj_cfg: &ProjectionConfig,
    cal: &CalibrationConfig,
) -> Result<BaseModel> {
    cfg.validate()?;
    cal.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("base training set"));
    }
    let mut classes = base_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let index: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let d_in = train_set[0].features.len();
    let mut features = Vec::with_capacity(train_set.len());
    let mut labels = Vec::with_capacity(train_set.len());
    let mut stats: BTreeMap<u32, ClassStats> = BTreeMap::new();
    for sample in train_set {
        let &idx = index.get(&sample.label).ok_or(Error::NonBaseLabel(sample.label))?;
        if sample.features.len() != d_in {
            return Err(Error::DimensionMismatch {
                expected: d_in,
                found: sample.features.len(),
            });
        }
        let x = power_transform(&sample.features, cal)?;
        stats
            .entry(sample.label)
            .or_insert_with(|| ClassStats::new(sample.label, d_in))
            .update(&x)?;
        features.push(x);
        labels.push(idx);
    }
    for &c in &classes {
        let count = stats.get(&c).map_or(0, |s| s.count);
        if count < 2 {
            return Err(Error::InsufficientSamples {
                class: c,
                count,
                required: 2,
            });
        }
    }

    let mut rng = Rng::new(cfg.seed);
    let mut projection = ProjectionModule::init(d_in, &proj_cfg.hidden, proj_cfg.d_hyper, &mut rng)?;
    let n_classes = classes.len();
    let mut vp = LossHead::new(cfg.loss_kind, d_in, n_classes, cfg.temperature, &mut rng)?;
    let mut hp = LossHead::new(cfg.loss_kind, proj_cfg.d_hyper, n_classes, cfg.temperature, &mut rng)?;

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sums = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.loss_kind == LossKind::Sc && chunk.len() < 2 {
                continue;
            }
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| features[i].as_slice()).collect();
            let x = Matrix::from_rows(&rows)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let vp_pass = vp.loss(&x, &y)?;
            let cache = projection.net().forward_cached(&x)?;
            let hp_pass = hp.loss(cache.output(), &y)?;
            let (proj_tape, _) = projection.net().backward(&cache, &hp_pass.input_grad)?;

            let step = StepLoss {
                vp: vp_pass.loss,
                hp: hp_pass.loss,
                total: vp_pass.loss + hp_pass.loss,
            };
            if !step.total.is_finite() {
                return Err(Error::NonFinite("base training loss"));
            }
            sgd_step(&mut vp.net, &vp_pass.tape, cfg.lr)?;
            sgd_step(&mut hp.net, &hp_pass.tape, cfg.lr)?;
            sgd_step(projection.net_mut(), &proj_tape, cfg.lr)?;

            let b = chunk.len();
            sums.0 += step.vp * b as f64;
            sums.1 += step.hp * b as f64;
            sums.2 += b;
            step_losses.push(step);
        }
        let n = sums.2.max(1) as f64;
        let (vp_mean, hp_mean) = (sums.0 / n, sums.1 / n);
        epoch_losses.push(StepLoss {
            vp: vp_mean,
            hp: hp_mean,
            total: vp_mean + hp_mean,
        });
    }

    let prototypes = compute_prototypes(&projection, &features, &labels, &classes, &stats)?;
    Ok(BaseModel {
        projection,
        heads: BaseHeads { vp, hp },
        stats: stats.into_values().collect(),
        prototypes,
        epoch_losses,
        step_losses,
    })
}

const PROTOTYPE_CHUNK: usize = 256;

fn compute_prototypes(
    projection: &ProjectionModule,
    features: &[Vec<f64>],
    labels: &[usize],
    classes: &[u32],
    stats: &BTreeMap<u32, ClassStats>,
) -> Result<PrototypeBank> {
    let d_hyper = projection.d_hyper();
    let mut sums = vec![vec![0.0; d_hyper]; classes.len()];
    for (rows, ys) in features.chunks(PROTOTYPE_CHUNK).zip(labels.chunks(PROTOTYPE_CHUNK)) {
        let z = projection.project_batch(&Matrix::from_rows(rows)?)?;
        for (r, &y) in ys.iter().enumerate() {
            crate::numerics::axpy(1.0, z.row(r), &mut sums[y]);
        }
    }
    let mut bank = PrototypeBank::default();
    for (i, &c) in classes.iter().enumerate() {
        let mut p = std::mem::take(&mut sums[i]);
        normalize_in_place(&mut p)?;
        bank.hyper.insert(c, p);
        bank.vanilla.insert(c, stats[&c].mean.clone());
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::gen_synthetic;

    fn small_proj() -> ProjectionConfig {
        ProjectionConfig {
            d_hyper: 64,
            hidden: vec![32],
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cal = CalibrationConfig::default();
        let cfg = BaseTrainConfig::default();
        let one = vec![
            LabeledFeature::new(0, vec![1.0, 2.0]),
            LabeledFeature::new(0, vec![1.5, 2.0]),
            LabeledFeature::new(1, vec![0.5, 0.1]),
        ];
        assert!(matches!(
            train_base(&one, &[0, 1], &cfg, &small_proj(), &cal),
            Err(Error::InsufficientSamples { class: 1, count: 1, .. })
        ));
        assert!(matches!(
            train_base(&one, &[0], &cfg, &small_proj(), &cal),
            Err(Error::NonBaseLabel(1))
        ));
        let sc = BaseTrainConfig {
            loss_kind: LossKind::Sc,
            batch_size: 1,
            ..Default::default()
        };
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn first_step_loss_is_two_log_c() {
        let data = gen_synthetic(4, 16, 20, 1, 4.0, 3).unwrap();
        let cfg = BaseTrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let m = train_base(&data.train, &[0, 1, 2, 3], &cfg, &small_proj(), &CalibrationConfig::default()).unwrap();
        let first = m.step_losses[0];
        assert!((first.total - 2.0 * 4f64.ln()).abs() < 1e-12);
        for s in &m.step_losses {
            assert_eq!(s.total, s.vp + s.hp);
        }
    }

    #[test]
    fn vanilla_prototypes_are_transformed_means() {
        let data = gen_synthetic(3, 8, 30, 1, 3.0, 8).unwrap();
        let cal = CalibrationConfig::default();
        let cfg = BaseTrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let m = train_base(&data.train, &[0, 1, 2], &cfg, &small_proj(), &cal).unwrap();
        for c in 0..3u32 {
            let xs: Vec<Vec<f64>> = data
                .train
                .iter()
                .filter(|s| s.label == c)
                .map(|s| power_transform(&s.features, &cal).unwrap())
                .collect();
            let proto = &m.prototypes.vanilla[&c];
            for j in 0..8 {
                let mean = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
                assert!((proto[j] - mean).abs() < 1e-9);
            }
            let h = &m.prototypes.hyper[&c];
            assert!((crate::numerics::norm(h) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        let data = gen_synthetic(3, 8, 20, 1, 3.0, 1).unwrap();
        let cfg = BaseTrainConfig {
            epochs: 3,
            seed: 17,
            ..Default::default()
        };
        let cal = CalibrationConfig::default();
        let a = train_base(&data.train, &[0, 1, 2], &cfg, &small_proj(), &cal).unwrap();
        let b = train_base(&data.train, &[0, 1, 2], &cfg, &small_proj(), &cal).unwrap();
        assert_eq!(a.projection, b.projection);
        assert_eq!(a.heads, b.heads);
        assert_eq!(a.prototypes, b.prototypes);
    }

    #[test]
    fn contrastive_variant_trains() {
        let data = gen_synthetic(4, 16, 40, 1, 4.0, 5).unwrap();
        let cfg = BaseTrainConfig {
            loss_kind: LossKind::Sc,
            epochs: 5,
            batch_size: 32,
            lr: 0.05,
            ..Default::default()
        };
        let m = train_base(&data.train, &[0, 1, 2, 3], &cfg, &small_proj(), &CalibrationConfig::default()).unwrap();
        assert_eq!(m.heads.vp.net.out_dim(), 128);
        let first = m.epoch_losses.first().unwrap().total;
        let last = m.epoch_losses.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }
}
