//! Dense-vector primitives and the seeded random source.
//!
//! Everything downstream accumulates in `f64`. Reductions use a fixed
//! eight-lane accumulation order so that a dot product gives the same bits
//! whether it is computed alone or as part of a batch.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANES: usize = 8;

/// Dot product with a fixed lane-wise summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let chunks_a = a.chunks_exact(LANES);
    let chunks_b = b.chunks_exact(LANES);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in tail_a.iter().zip(tail_b) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length in place and returns the original norm.
pub fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("vector"));
    }
    Ok(())
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Tempered softmax, `exp(l_i/τ) / Σ exp(l_j/τ)`, via max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    crate::error::ensure_finite(logits, "softmax logits")?;
    let mut out: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Untempered softmax over finite, non-empty logits. Returns log-sum-exp.
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

/// Draws `mean + sqrt(var) ⊙ z` with `z` standard normal.
pub fn gaussian_sample(mean: &[f64], diag_var: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if mean.len() != diag_var.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: diag_var.len(),
        });
    }
    if let Some((index, &value)) = diag_var
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0))
    {
        return Err(Error::NegativeVariance { index, value });
    }
    Ok(mean
        .iter()
        .zip(diag_var)
        .map(|(m, v)| {
            let z = rng.standard_normal();
            if *v == 0.0 {
                *m
            } else {
                m + v.sqrt() * z
            }
        })
        .collect())
}

/// Seeded ChaCha8 stream. A seed gives the same stream on every platform
/// and the full state serializes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// An independent generator derived from this one's stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        let u = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let direct = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - direct).abs() < 1e-15);
        assert!((got - 0.9746).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.5, 2.5, 2.5], 0.3).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let ln2 = 2f64.ln();
        let p = softmax(&[0.0, ln2], 1.0).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[0.0, ln2], 0.1).unwrap();
        assert!((p[0] - 1.0 / 1025.0).abs() < 1e-9);
        assert!((p[1] - 1024.0 / 1025.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -1.0).is_err());
        assert!(softmax(&[1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let m = [1.5, -2.0, 0.0];
        let mut rng = Rng::new(3);
        assert_eq!(gaussian_sample(&m, &[0.0; 3], &mut rng).unwrap(), m);

        let v = [0.5, 2.0, 1.0];
        let a = gaussian_sample(&m, &v, &mut Rng::new(11)).unwrap();
        let b = gaussian_sample(&m, &v, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            gaussian_sample(&m, &[1.0, -0.1, 1.0], &mut rng),
            Err(Error::NegativeVariance { index: 1, .. })
        ));
    }

    #[test]
    fn gaussian_law_of_large_numbers() {
        let mean = [3.0, -1.0, 0.25, 10.0];
        let var = [1.0, 4.0, 0.01, 9.0];
        let n = 100_000;
        let mut rng = Rng::new(2024);
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let s = gaussian_sample(&mean, &var, &mut rng).unwrap();
            for j in 0..4 {
                acc[j] += s[j];
            }
        }
        for j in 0..4 {
            let emp = acc[j] / n as f64;
            let bound = 4.0 * (var[j] / n as f64).sqrt();
            assert!((emp - mean[j]).abs() < bound, "coord {j}: {emp} vs {}", mean[j]);
        }
    }

    #[test]
    fn rng_seeded_streams() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Rng::new(1).next_u64(), Rng::new(2).next_u64());
        let mut r = Rng::new(3);
        assert!((0..1000).all(|_| r.below(7) < 7));
    }

    #[test]
    fn rng_state_roundtrip_mid_stream() {
        let mut rng = Rng::new(99);
        for _ in 0..17 {
            rng.next_u64();
        }
        rng.standard_normal();
        let saved = serde_json::to_string(&rng).unwrap();
        let mut restored: Rng = serde_json::from_str(&saved).unwrap();
        for _ in 0..50 {
            assert_eq!(rng.standard_normal().to_bits(), restored.standard_normal().to_bits());
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<u32> = (0..100).collect();
        Rng::new(5).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let mut rng = Rng::new(8);
        for len in [1usize, 7, 8, 9, 31, 64, 100] {
            let a: Vec<f64> = (0..len).map(|_| rng.standard_normal()).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.standard_normal()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-1e4f64..1e4, 1..40), t in 1e-3f64..10.0) {
            let p = softmax(&logits, t).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..20).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )),
            alpha in 1e-3f64..1e3,
            beta in 1e-3f64..1e3,
        ) {
            let (a, b) = pair;
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let c = cosine_similarity(&a, &b).unwrap();
            prop_assert!((c - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            prop_assert!((c - cosine_similarity(&sa, &sb).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
