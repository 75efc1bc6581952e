//! The trainable projection into hyperdimensional space and the loss heads
//! used while training it.
//!
//! Networks are stacks of affine layers with a rectifier between layers and
//! nothing after the last one. Forward and backward passes are written out
//! by hand; every output element is produced by the same fixed-order
//! reduction regardless of batch size or thread count, so batched and
//! per-sample passes agree bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::numerics::{axpy, dot, Rng};

pub const DEFAULT_D_HYPER: usize = 2048;
pub const DEFAULT_HIDDEN: usize = 512;
/// Widths of the contrastive head.
pub const SC_HEAD_DIMS: [usize; 2] = [160, 128];
pub const DEFAULT_SC_TEMPERATURE: f64 = 0.1;

// Below this many multiply-adds a pass stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Row-major dense matrix; one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

/// One affine layer, `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Normal weights with standard deviation `sqrt(gain / fan_in)`, zero bias.
    pub fn fan_in(in_dim: usize, out_dim: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = (gain / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| std * rng.standard_normal()).collect();
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    fn weight_row(&self, j: usize) -> &[f64] {
        &self.weight[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows, self.out_dim);
        let body = |(i, out_row): (usize, &mut [f64])| {
            let x = input.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(self.weight_row(j), x) + self.bias[j];
            }
        };
        if input.rows * self.in_dim * self.out_dim >= PAR_THRESHOLD && input.rows > 1 {
            out.data
                .par_chunks_mut(self.out_dim)
                .enumerate()
                .for_each(body);
        } else {
            out.data.chunks_mut(self.out_dim).enumerate().for_each(body);
        }
        out
    }

    /// Gradients of the layer parameters given `grad_out` (rows × out).
    fn param_grads(&self, input: &Matrix, grad_out: &Matrix) -> DenseGrads {
        let mut g = DenseGrads {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.out_dim],
        };
        let in_dim = self.in_dim;
        let rows = input.rows;
        let body = |(j, (w_row, b)): (usize, (&mut [f64], &mut f64))| {
            for r in 0..rows {
                let coef = grad_out.data[r * grad_out.cols + j];
                if coef != 0.0 {
                    axpy(coef, input.row(r), w_row);
                }
                *b += coef;
            }
        };
        if rows * self.in_dim * self.out_dim >= PAR_THRESHOLD {
            g.weight
                .par_chunks_mut(in_dim)
                .zip(g.bias.par_iter_mut())
                .enumerate()
                .for_each(body);
        } else {
            g.weight
                .chunks_mut(in_dim)
                .zip(g.bias.iter_mut())
                .enumerate()
                .for_each(body);
        }
        g
    }

    /// `grad_out · W`, the gradient with respect to the layer input.
    fn input_grad(&self, grad_out: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(grad_out.rows, self.in_dim);
        let body = |(r, dx): (usize, &mut [f64])| {
            for (j, &coef) in grad_out.row(r).iter().enumerate() {
                if coef != 0.0 {
                    axpy(coef, self.weight_row(j), dx);
                }
            }
        };
        if grad_out.rows * self.in_dim * self.out_dim >= PAR_THRESHOLD && grad_out.rows > 1 {
            out.data
                .par_chunks_mut(self.in_dim.max(1))
                .enumerate()
                .for_each(body);
        } else {
            out.data.chunks_mut(self.in_dim.max(1)).enumerate().for_each(body);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient buffers mirroring one [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<DenseGrads>,
}

impl GradientTape {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientTape {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|g| *g = 0.0);
            l.bias.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Weights then bias, layer by layer; same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        for l in &self.layers {
            crate::error::ensure_finite(&l.weight, "gradient")?;
            crate::error::ensure_finite(&l.bias, "gradient")?;
        }
        Ok(())
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation output of the last layer.
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Feed-forward stack of [`Dense`] layers with rectifiers between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} feeds layer input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        for l in &layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::invalid("layer dimensions must be positive"));
            }
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ShapeMismatch("layer buffers do not match its dims".into()));
            }
        }
        Ok(Mlp { layers })
    }

    /// Fan-in scaled normal init: rectifier gain on hidden layers, unit gain
    /// on the output layer, zero biases.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("invalid layer dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::fan_in(w[0], w[1], if i == last { 1.0 } else { 2.0 }, rng))
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[in, hidden.., out]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                found: input.cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            relu_in_place(&mut x);
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(input.clone());
        let mut x = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            relu_in_place(&mut x);
            let next = layer.forward(&x);
            inputs.push(x);
            x = next;
        }
        Ok(ForwardCache { inputs, output: x })
    }

    /// Backpropagates `grad_output` through a cached pass. Returns parameter
    /// gradients and the gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(GradientTape, Matrix)> {
        if grad_output.rows != cache.output.rows || grad_output.cols != cache.output.cols {
            return Err(Error::ShapeMismatch("output gradient does not match forward pass".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            grads.push(layer.param_grads(input, &g));
            let mut gin = layer.input_grad(&g);
            if l > 0 {
                // input to layer l is relu(pre); its derivative is the active mask
                for (gi, &a) in gin.data.iter_mut().zip(&input.data) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = gin;
        }
        grads.reverse();
        let tape = GradientTape { layers: grads };
        tape.check_finite()?;
        Ok((tape, g))
    }
}

fn relu_in_place(m: &mut Matrix) {
    m.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `p ← p − lr·g` for every parameter of `net`.
pub fn sgd_step(net: &mut Mlp, tape: &GradientTape, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if tape.layers.len() != net.layers.len() {
        return Err(Error::ShapeMismatch("tape and network have different depth".into()));
    }
    for (layer, g) in net.layers.iter().zip(&tape.layers) {
        if g.weight.len() != layer.weight.len() || g.bias.len() != layer.bias.len() {
            return Err(Error::ShapeMismatch("tape layer does not mirror network layer".into()));
        }
    }
    for (layer, g) in net.layers.iter_mut().zip(&tape.layers) {
        axpy(-lr, &g.weight, &mut layer.weight);
        axpy(-lr, &g.bias, &mut layer.bias);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite("parameters after SGD step"));
    }
    Ok(())
}

/// The map from calibrated features to hyperdimensional embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModule {
    net: Mlp,
}

impl ProjectionModule {
    /// `d_in → hidden.. → d_hyper`.
    pub fn init(d_in: usize, hidden: &[usize], d_hyper: usize, rng: &mut Rng) -> Result<Self> {
        if d_in == 0 || d_hyper == 0 {
            return Err(Error::invalid("projection dims must be positive"));
        }
        let mut dims = vec![d_in];
        dims.extend_from_slice(hidden);
        dims.push(d_hyper);
        Ok(ProjectionModule {
            net: Mlp::init(&dims, rng)?,
        })
    }

    pub fn from_net(net: Mlp) -> Self {
        ProjectionModule { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn d_in(&self) -> usize {
        self.net.in_dim()
    }

    pub fn d_hyper(&self) -> usize {
        self.net.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.net.forward(&input)?.data)
    }

    pub fn project_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.net.forward(x)
    }
}

pub fn init_projection(d_in: usize, d_hyper: usize, rng: &mut Rng) -> Result<ProjectionModule> {
    ProjectionModule::init(d_in, &[DEFAULT_HIDDEN], d_hyper, rng)
}

pub fn project(m: &ProjectionModule, x: &[f64]) -> Result<Vec<f64>> {
    m.project(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy over base-class logits.
    Ce,
    /// Supervised contrastive over normalized embeddings.
    Sc,
}

/// Base-training head: a linear classifier (CE) or a two-layer embedding
/// network whose output is L2-normalized (SC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHead {
    pub kind: LossKind,
    pub net: Mlp,
    pub temperature: f64,
}

/// Loss, head gradients and gradient into the head's input.
#[derive(Debug, Clone)]
pub struct HeadPass {
    pub loss: f64,
    pub tape: GradientTape,
    pub input_grad: Matrix,
}

impl LossHead {
    /// CE heads start at zero so every class is equally likely.
    pub fn ce(in_dim: usize, n_classes: usize) -> Result<Self> {
        Ok(LossHead {
            kind: LossKind::Ce,
            net: Mlp::new(vec![Dense::zeros(in_dim, n_classes)])?,
            temperature: 1.0,
        })
    }

    pub fn sc(in_dim: usize, temperature: f64, rng: &mut Rng) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("contrastive temperature must be positive"));
        }
        Ok(LossHead {
            kind: LossKind::Sc,
            net: Mlp::init(&[in_dim, SC_HEAD_DIMS[0], SC_HEAD_DIMS[1]], rng)?,
            temperature,
        })
    }

    pub fn new(kind: LossKind, in_dim: usize, n_classes: usize, temperature: f64, rng: &mut Rng) -> Result<Self> {
        match kind {
            LossKind::Ce => LossHead::ce(in_dim, n_classes),
            LossKind::Sc => LossHead::sc(in_dim, temperature, rng),
        }
    }

    /// Head output: logits for CE, unit embeddings for SC.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = self.net.forward(input)?;
        if self.kind == LossKind::Sc {
            for i in 0..out.rows {
                crate::numerics::normalize_in_place(out.row_mut(i))?;
            }
        }
        Ok(out)
    }

    /// Batch loss for class indices `labels` and all gradients.
    pub fn loss(&self, input: &Matrix, labels: &[usize]) -> Result<HeadPass> {
        if input.rows == 0 {
            return Err(Error::Empty("batch"));
        }
        if labels.len() != input.rows {
            return Err(Error::DimensionMismatch {
                expected: input.rows,
                found: labels.len(),
            });
        }
        let cache = self.net.forward_cached(input)?;
        let raw = cache.output();
        let (loss, grad_out) = match self.kind {
            LossKind::Ce => losses::ce_batch(raw, labels)?,
            LossKind::Sc => {
                let mut unit = raw.clone();
                let mut norms = Vec::with_capacity(raw.rows);
                for i in 0..unit.rows {
                    norms.push(crate::numerics::normalize_in_place(unit.row_mut(i))?);
                }
                let (loss, g_unit) = losses::sup_con_loss(&unit, labels, self.temperature)?;
                let mut g_raw = Matrix::zeros(raw.rows, raw.cols);
                for i in 0..raw.rows {
                    let z = unit.row(i);
                    let g = g_unit.row(i);
                    let proj = dot(z, g);
                    for ((o, &gk), &zk) in g_raw.row_mut(i).iter_mut().zip(g).zip(z) {
                        *o = (gk - zk * proj) / norms[i];
                    }
                }
                (loss, g_raw)
            }
        };
        let (tape, input_grad) = self.net.backward(&cache, &grad_out)?;
        Ok(HeadPass {
            loss,
            tape,
            input_grad,
        })
    }
}

/// Loss of `head ∘ projection` on a batch and the gradient tapes of both.
pub fn backward(
    projection: &ProjectionModule,
    head: &LossHead,
    features: &Matrix,
    labels: &[usize],
) -> Result<(f64, GradientTape, GradientTape)> {
    if features.rows == 0 {
        return Err(Error::Empty("batch"));
    }
    let cache = projection.net.forward_cached(features)?;
    let pass = head.loss(cache.output(), labels)?;
    let (proj_tape, _) = projection.net.backward(&cache, &pass.input_grad)?;
    Ok((pass.loss, proj_tape, pass.tape))
}
