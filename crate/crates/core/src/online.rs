//! Single-pass online sessions over novel classes.
//!
//! A session first streams its samples once, folding them into per-class
//! statistics and a running sum of their projections, and keeps nothing else.
//! It then alternates, `T` times, between a prototype step (projection held
//! fixed) and a projection step (prototypes held fixed). Both minimise the
//! same cosine-softmax cross-entropy on a fresh balanced batch of calibrated
//! pseudo-features drawn from the statistics of every seen class.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::base_trainer::BaseModel;
use crate::calibration::{power_transform_in_place, sample_with, CalibrationConfig, ClassStats, PseudoBatch, SamplingPlan};
use crate::dataio::LabeledFeature;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, norm, normalize_in_place, softmax_in_place, Rng};
use crate::projection::{ForwardCache, GradientTape, Matrix, ProjectionModule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Bi-level iterations per session.
    pub iterations: usize,
    /// Pseudo-features drawn per class and iteration.
    pub k_per_class: usize,
    /// Overrides `k_per_class` for base-session classes.
    pub k_base: Option<usize>,
    /// Overrides `k_per_class` for classes from later sessions.
    pub k_novel: Option<usize>,
    pub lr_inner: f64,
    pub lr_outer: f64,
    pub stream_batch: usize,
    pub temperature_cls: f64,
    pub freeze_base_prototypes: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            iterations: 20,
            k_per_class: 20,
            k_base: None,
            k_novel: None,
            lr_inner: 0.05,
            lr_outer: 0.01,
            stream_batch: 10,
            temperature_cls: 0.1,
            freeze_base_prototypes: false,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive(self.iterations, "iterations")?;
        positive(self.k_per_class, "k_per_class")?;
        positive(self.stream_batch, "stream_batch")?;
        if let Some(k) = self.k_base {
            positive(k, "k_base")?;
        }
        if let Some(k) = self.k_novel {
            positive(k, "k_novel")?;
        }
        for (v, what) in [(self.lr_inner, "lr_inner"), (self.lr_outer, "lr_outer")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{what} must be non-negative, got {v}")));
            }
        }
        if !(self.temperature_cls > 0.0 && self.temperature_cls.is_finite()) {
            return Err(Error::Config("temperature_cls must be positive".into()));
        }
        Ok(())
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        match (self.k_base, self.k_novel) {
            (None, None) => SamplingPlan::Balanced(self.k_per_class),
            (b, n) => SamplingPlan::Split {
                k_base: b.unwrap_or(self.k_per_class),
                k_novel: n.unwrap_or(self.k_per_class),
            },
        }
    }
}

/// Everything the learner knows about one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub stats: ClassStats,
    /// Unit-norm hyperdimensional prototype.
    pub prototype: Vec<f64>,
    /// Session that introduced the class; 0 for base classes.
    pub session: u32,
}

/// Learner state between sessions: a projection, and statistics plus a
/// prototype per class. No sample is ever stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub calibration: CalibrationConfig,
    pub projection: ProjectionModule,
    pub classes: BTreeMap<u32, ClassRecord>,
    pub session_index: u32,
}

/// What a stream contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbSummary {
    pub new_classes: Vec<u32>,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_index: u32,
    pub absorbed: AbsorbSummary,
    /// See [`BilevelTrace::probe`].
    pub loss_trace: Vec<f64>,
    pub batch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelTrace {
    /// Objective on one batch drawn before the first iteration, measured
    /// before any update and after each iteration (`T + 1` values).
    pub probe: Vec<f64>,
    /// Objective on each iteration's own batch before its updates.
    pub batch: Vec<f64>,
}

impl LearnerState {
    pub fn from_base(model: BaseModel, calibration: CalibrationConfig) -> Result<Self> {
        let mut classes = BTreeMap::new();
        for stats in model.stats {
            let id = stats.class_id;
            let prototype = model
                .prototypes
                .hyper
                .get(&id)
                .cloned()
                .ok_or(Error::MissingPrototype(id))?;
            classes.insert(
                id,
                ClassRecord {
                    stats,
                    prototype,
                    session: 0,
                },
            );
        }
        Ok(LearnerState {
            calibration,
            projection: model.projection,
            classes,
            session_index: 0,
        })
    }

    pub fn seen_classes(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn base_classes(&self) -> Vec<u32> {
        self.classes
            .iter()
            .filter(|(_, r)| r.session == 0)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.d_in()
    }

    pub fn d_hyper(&self) -> usize {
        self.projection.d_hyper()
    }

    /// Values the online phase may change: projection parameters and one
    /// prototype per class.
    pub fn trainable_values(&self) -> usize {
        self.projection.param_count() + self.classes.len() * self.d_hyper()
    }

    /// Streams one session's samples in arrival order, `stream_batch` at a
    /// time. The state is only modified if the whole stream is valid.
    pub fn absorb_stream<I>(&mut self, samples: I, cfg: &OnlineConfig) -> Result<AbsorbSummary>
    where
        I: IntoIterator,
        I::Item: Borrow<LabeledFeature>,
    {
        cfg.validate()?;
        let d_in = self.feature_dim();
        let d_hyper = self.d_hyper();
        let mut fresh: BTreeMap<u32, (ClassStats, Vec<f64>)> = BTreeMap::new();
        let mut batch_x: Vec<f64> = Vec::with_capacity(cfg.stream_batch * d_in);
        let mut batch_y: Vec<u32> = Vec::with_capacity(cfg.stream_batch);
        let mut total = 0u64;

        let flush = |xs: &mut Vec<f64>, ys: &mut Vec<u32>, fresh: &mut BTreeMap<u32, (ClassStats, Vec<f64>)>| -> Result<()> {
            if ys.is_empty() {
                return Ok(());
            }
            let x = Matrix::from_vec(ys.len(), d_in, std::mem::take(xs))?;
            for (r, &y) in ys.iter().enumerate() {
                fresh
                    .entry(y)
                    .or_insert_with(|| (ClassStats::new(y, d_in), vec![0.0; d_hyper]))
                    .0
                    .update(x.row(r))?;
            }
            let z = self.projection.project_batch(&x)?;
            for (r, &y) in ys.iter().enumerate() {
                axpy(1.0, z.row(r), &mut fresh.get_mut(&y).expect("inserted above").1);
            }
            ys.clear();
            Ok(())
        };

        for item in samples {
            let sample = item.borrow();
            if self.classes.contains_key(&sample.label) {
                return Err(Error::ClassAlreadySeen(sample.label));
            }
            if sample.features.len() != d_in {
                return Err(Error::DimensionMismatch {
                    expected: d_in,
                    found: sample.features.len(),
                });
            }
            let start = batch_x.len();
            batch_x.extend_from_slice(&sample.features);
            power_transform_in_place(&mut batch_x[start..], &self.calibration)?;
            batch_y.push(sample.label);
            total += 1;
            if batch_y.len() == cfg.stream_batch {
                flush(&mut batch_x, &mut batch_y, &mut fresh)?;
            }
        }
        flush(&mut batch_x, &mut batch_y, &mut fresh)?;
        if total == 0 {
            return Err(Error::Empty("session stream"));
        }

        let session = self.session_index + 1;
        let mut records = Vec::with_capacity(fresh.len());
        for (class, (stats, mut proj_sum)) in fresh {
            normalize_in_place(&mut proj_sum)?;
            records.push((
                class,
                ClassRecord {
                    stats,
                    prototype: proj_sum,
                    session,
                },
            ));
        }
        let new_classes = records.iter().map(|(c, _)| *c).collect();
        self.classes.extend(records);
        self.session_index = session;
        Ok(AbsorbSummary {
            new_classes,
            samples: total,
        })
    }

    /// One balanced (or split, if overridden) batch of calibrated draws.
    pub fn sample_pseudo_batch(&self, cfg: &OnlineConfig, rng: &mut Rng) -> Result<PseudoBatch> {
        let plan = cfg.sampling_plan();
        sample_with(
            self.classes
                .values()
                .map(|r| (&r.stats, plan.count_for(r.session == 0))),
            &self.calibration,
            rng,
        )
    }

    fn prototype_matrix(&self) -> (Vec<u32>, Matrix) {
        let ids: Vec<u32> = self.classes.keys().copied().collect();
        let rows: Vec<&[f64]> = self.classes.values().map(|r| r.prototype.as_slice()).collect();
        let m = Matrix::from_rows(&rows).expect("prototypes share a dimension");
        (ids, m)
    }

    fn batch_targets(&self, ids: &[u32], batch: &PseudoBatch) -> Result<Vec<usize>> {
        if batch.is_empty() {
            return Err(Error::Empty("pseudo batch"));
        }
        let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        batch
            .labels
            .iter()
            .map(|l| index.get(l).copied().ok_or(Error::MissingPrototype(*l)))
            .collect()
    }

    /// Objective value on `batch` without changing anything.
    pub fn objective(&self, batch: &PseudoBatch, temperature: f64) -> Result<f64> {
        let (ids, protos) = self.prototype_matrix();
        let targets = self.batch_targets(&ids, batch)?;
        let z = self.projection.project_batch(&Matrix::from_rows(&batch.features)?)?;
        Ok(cosine_objective(&z, &protos, &targets, temperature, false, false)?.loss)
    }

    /// Inner step: one gradient step on the prototypes, projection frozen,
    /// then re-normalization. Returns the loss before the step.
    pub fn refine_prototypes(&mut self, batch: &PseudoBatch, lr_inner: f64, temperature: f64, freeze_base: bool) -> Result<f64> {
        let (ids, protos) = self.prototype_matrix();
        let targets = self.batch_targets(&ids, batch)?;
        let z = self.projection.project_batch(&Matrix::from_rows(&batch.features)?)?;
        let pass = cosine_objective(&z, &protos, &targets, temperature, true, false)?;
        self.apply_prototype_step(&ids, pass.proto_grad.as_ref().expect("requested"), lr_inner, freeze_base)?;
        Ok(pass.loss)
    }

    /// Outer step: one gradient step on the projection, prototypes frozen.
    /// Returns the loss before the step.
    pub fn align_projection(&mut self, batch: &PseudoBatch, lr_outer: f64, temperature: f64) -> Result<f64> {
        let (ids, protos) = self.prototype_matrix();
        let targets = self.batch_targets(&ids, batch)?;
        let cache = self.projection.net().forward_cached(&Matrix::from_rows(&batch.features)?)?;
        let (loss, tape) = projection_step_grads(&self.projection, &cache, &protos, &targets, temperature)?;
        apply_projection_step(&mut self.projection, &tape, lr_outer)?;
        Ok(loss)
    }

    /// Gradient of the objective with respect to the projection parameters.
    pub fn projection_gradient(&self, batch: &PseudoBatch, temperature: f64) -> Result<(f64, GradientTape)> {
        let (ids, protos) = self.prototype_matrix();
        let targets = self.batch_targets(&ids, batch)?;
        let cache = self.projection.net().forward_cached(&Matrix::from_rows(&batch.features)?)?;
        projection_step_grads(&self.projection, &cache, &protos, &targets, temperature)
    }

    /// Gradient of the objective with respect to each prototype, rows in
    /// ascending class order.
    pub fn prototype_gradient(&self, batch: &PseudoBatch, temperature: f64) -> Result<(f64, Matrix)> {
        let (ids, protos) = self.prototype_matrix();
        let targets = self.batch_targets(&ids, batch)?;
        let z = self.projection.project_batch(&Matrix::from_rows(&batch.features)?)?;
        let pass = cosine_objective(&z, &protos, &targets, temperature, true, false)?;
        Ok((pass.loss, pass.proto_grad.expect("requested")))
    }

    fn apply_prototype_step(&mut self, ids: &[u32], grad: &Matrix, lr: f64, freeze_base: bool) -> Result<()> {
        if lr == 0.0 {
            return Ok(());
        }
        for (i, id) in ids.iter().enumerate() {
            let record = self.classes.get_mut(id).expect("ids come from the map");
            if freeze_base && record.session == 0 {
                continue;
            }
            let g = grad.row(i);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            axpy(-lr, g, &mut record.prototype);
            normalize_in_place(&mut record.prototype)?;
        }
        Ok(())
    }

    /// `T` alternations of prototype refinement and projection alignment,
    /// each on a fresh pseudo-feature batch.
    pub fn bilevel_optimize(&mut self, cfg: &OnlineConfig, rng: &mut Rng) -> Result<BilevelTrace> {
        cfg.validate()?;
        if self.classes.len() < 2 {
            return Err(Error::invalid("bi-level optimization needs at least 2 seen classes"));
        }
        let probe = self.sample_pseudo_batch(cfg, rng)?;
        let probe_loss = |s: &Self| -> Result<f64> {
            let v = s.objective(&probe, cfg.temperature_cls)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite("bi-level objective"))
            }
        };
        let mut trace = BilevelTrace {
            probe: Vec::with_capacity(cfg.iterations + 1),
            batch: Vec::with_capacity(cfg.iterations),
        };
        trace.probe.push(probe_loss(self)?);
        for _ in 0..cfg.iterations {
            let batch = self.sample_pseudo_batch(cfg, rng)?;
            let (ids, protos) = self.prototype_matrix();
            let targets = self.batch_targets(&ids, &batch)?;
            // The projection is fixed during the inner step, so its forward
            // pass serves both levels.
            let cache = self.projection.net().forward_cached(&Matrix::from_rows(&batch.features)?)?;
            let inner = cosine_objective(cache.output(), &protos, &targets, cfg.temperature_cls, true, false)?;
            if !inner.loss.is_finite() {
                return Err(Error::NonFinite("bi-level objective"));
            }
            trace.batch.push(inner.loss);
            self.apply_prototype_step(
                &ids,
                inner.proto_grad.as_ref().expect("requested"),
                cfg.lr_inner,
                cfg.freeze_base_prototypes,
            )?;

            let (_, protos) = self.prototype_matrix();
            let (_, tape) = projection_step_grads(&self.projection, &cache, &protos, &targets, cfg.temperature_cls)?;
            apply_projection_step(&mut self.projection, &tape, cfg.lr_outer)?;
            trace.probe.push(probe_loss(self)?);
        }
        Ok(trace)
    }

    /// Absorbs a session stream and then runs the bi-level refinement.
    pub fn run_session<I>(&mut self, samples: I, cfg: &OnlineConfig, rng: &mut Rng) -> Result<SessionOutcome>
    where
        I: IntoIterator,
        I::Item: Borrow<LabeledFeature>,
    {
        let absorbed = self.absorb_stream(samples, cfg)?;
        let trace = self.bilevel_optimize(cfg, rng)?;
        Ok(SessionOutcome {
            session_index: self.session_index,
            absorbed,
            loss_trace: trace.probe,
            batch_losses: trace.batch,
        })
    }

    /// Checks the structural invariants: one unit prototype and one
    /// statistics entry per class, consistent dimensions.
    pub fn check_invariants(&self) -> Result<()> {
        for (&id, r) in &self.classes {
            if r.stats.class_id != id {
                return Err(Error::invalid(format!("class {id} carries stats for {}", r.stats.class_id)));
            }
            if r.stats.dim() != self.feature_dim() || r.prototype.len() != self.d_hyper() {
                return Err(Error::ShapeMismatch(format!("class {id} has mismatched dimensions")));
            }
            let n = norm(&r.prototype);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("prototype of class {id} has norm {n}")));
            }
        }
        if !self.projection.net().is_finite() {
            return Err(Error::NonFinite("projection parameters"));
        }
        Ok(())
    }
}

fn projection_step_grads(
    projection: &ProjectionModule,
    cache: &ForwardCache,
    protos: &Matrix,
    targets: &[usize],
    temperature: f64,
) -> Result<(f64, GradientTape)> {
    let pass = cosine_objective(cache.output(), protos, targets, temperature, false, true)?;
    let (tape, _) = projection.net().backward(cache, pass.embed_grad.as_ref().expect("requested"))?;
    Ok((pass.loss, tape))
}

fn apply_projection_step(projection: &mut ProjectionModule, tape: &GradientTape, lr: f64) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    crate::projection::sgd_step(projection.net_mut(), tape, lr)
}

pub(crate) struct ObjectivePass {
    pub loss: f64,
    pub proto_grad: Option<Matrix>,
    pub embed_grad: Option<Matrix>,
}

/// Mean over rows of `−log softmax_c(cos(z_b, p_c)/τ)[y_b]`.
///
/// Prototypes are normalized inside the objective, so gradients are exact
/// for any prototype norm (the learner keeps them at one).
pub(crate) fn cosine_objective(
    embeddings: &Matrix,
    protos: &Matrix,
    targets: &[usize],
    temperature: f64,
    want_proto: bool,
    want_embed: bool,
) -> Result<ObjectivePass> {
    let b = embeddings.rows();
    let c = protos.rows();
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    if embeddings.cols() != protos.cols() {
        return Err(Error::DimensionMismatch {
            expected: protos.cols(),
            found: embeddings.cols(),
        });
    }
    let proto_norms: Vec<f64> = protos.iter_rows().map(norm).collect();
    if proto_norms.iter().any(|&n| n == 0.0) {
        return Err(Error::ZeroNorm);
    }
    let mut proto_grad = want_proto.then(|| Matrix::zeros(c, protos.cols()));
    let mut embed_grad = want_embed.then(|| Matrix::zeros(b, embeddings.cols()));
    let mut total = 0.0;
    let mut cos = vec![0.0; c];
    let mut q = vec![0.0; c];
    for (row, &y) in targets.iter().enumerate() {
        let z = embeddings.row(row);
        let zn = norm(z);
        if zn == 0.0 {
            return Err(Error::ZeroNorm);
        }
        for k in 0..c {
            cos[k] = dot(z, protos.row(k)) / (zn * proto_norms[k]);
            q[k] = cos[k] / temperature;
        }
        let lse = softmax_in_place(&mut q);
        total += lse - cos[y] / temperature;
        // dL/dcos_k for this row
        q[y] -= 1.0;
        let scale = 1.0 / (b as f64 * temperature);
        if let Some(pg) = proto_grad.as_mut() {
            for k in 0..c {
                let coef = q[k] * scale;
                if coef == 0.0 {
                    continue;
                }
                let pk = proto_norms[k];
                let g = pg.row_mut(k);
                // d cos / d p = (ẑ − cos·p̂) / |p|
                for ((gj, &zj), &pj) in g.iter_mut().zip(z).zip(protos.row(k)) {
                    *gj += coef * (zj / zn - cos[k] * pj / pk) / pk;
                }
            }
        }
        if let Some(eg) = embed_grad.as_mut() {
            let g = eg.row_mut(row);
            for k in 0..c {
                let coef = q[k] * scale;
                if coef == 0.0 {
                    continue;
                }
                let pk = proto_norms[k];
                // d cos / d z = (p̂ − cos·ẑ) / |z|
                for ((gj, &zj), &pj) in g.iter_mut().zip(z).zip(protos.row(k)) {
                    *gj += coef * (pj / pk - cos[k] * zj / zn) / zn;
                }
            }
        }
    }
    Ok(ObjectivePass {
        loss: total / b as f64,
        proto_grad,
        embed_grad,
    })
}
