//! Training objectives: softmax cross-entropy and supervised contrastive loss.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, softmax_in_place};
use crate::projection::Matrix;

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    crate::error::ensure_finite(logits, "logits")?;
    let mut p = logits.to_vec();
    let lse = softmax_in_place(&mut p);
    let loss = lse - logits[label];
    p[label] -= 1.0;
    Ok((loss, p))
}

/// Mean cross-entropy over a batch of logit rows; gradient is per-row
/// `softmax − onehot` scaled by `1/B`.
pub fn ce_batch(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let b = logits.rows();
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut grad = Matrix::zeros(b, logits.cols());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let (loss, g) = ce_loss(logits.row(i), label)?;
        total += loss;
        for (o, v) in grad.row_mut(i).iter_mut().zip(g) {
            *o = v / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

const UNIT_TOL: f64 = 1e-6;

/// Supervised contrastive loss over unit-norm embeddings.
///
/// For each anchor `i` with at least one same-label partner,
/// `ℓ_i = −(1/|P(i)|) Σ_{p∈P(i)} log softmax_{a≠i}(z_i·z_a/τ)[p]`; the loss is
/// the mean of `ℓ_i` over those anchors and zero when there are none.
/// Returns the gradient with respect to each embedding.
pub fn sup_con_loss<L: PartialEq>(embeddings: &Matrix, labels: &[L], temperature: f64) -> Result<(f64, Matrix)> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "contrastive loss needs at least 2 embeddings, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("contrastive temperature must be positive"));
    }
    for (index, z) in embeddings.iter_rows().enumerate() {
        let nz = norm(z);
        if (nz - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitEmbedding { index, norm: nz });
        }
    }

    // Pairwise similarity coefficients dℓ/ds_ia, accumulated per anchor.
    let mut coef = vec![0.0; n * n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut logits = vec![0.0; n - 1];
    for i in 0..n {
        let positives = (0..n).filter(|&a| a != i && labels[a] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let zi = embeddings.row(i);
        let others: Vec<usize> = (0..n).filter(|&a| a != i).collect();
        for (slot, &a) in others.iter().enumerate() {
            logits[slot] = dot(zi, embeddings.row(a)) / temperature;
        }
        let mut q = logits.clone();
        let lse = softmax_in_place(&mut q);
        let inv_p = 1.0 / positives as f64;
        let mut loss_i = 0.0;
        for (slot, &a) in others.iter().enumerate() {
            let positive = labels[a] == labels[i];
            if positive {
                loss_i += lse - logits[slot];
            }
            let target = if positive { inv_p } else { 0.0 };
            coef[i * n + a] = (q[slot] - target) / temperature;
        }
        total += loss_i * inv_p;
    }

    let mut grad = Matrix::zeros(n, embeddings.cols());
    if anchors == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / anchors as f64;
    for i in 0..n {
        for a in 0..n {
            let c = coef[i * n + a] * scale;
            if c == 0.0 {
                continue;
            }
            // s_ia = z_i·z_a contributes to both endpoints.
            let za = embeddings.row(a).to_vec();
            let zi = embeddings.row(i).to_vec();
            crate::numerics::axpy(c, &za, grad.row_mut(i));
            crate::numerics::axpy(c, &zi, grad.row_mut(a));
        }
    }
    Ok((total * scale, grad))
}
