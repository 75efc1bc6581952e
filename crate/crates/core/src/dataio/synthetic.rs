//! Rectified Gaussian mixtures standing in for backbone features.
//!
//! Class `c` has a centre `μ_c` with coordinates `s·sqrt(6/d)·u`, `u ~ U(0,1)`,
//! so the expected distance between two centres is `s` noise standard
//! deviations. Samples are `max(0, μ_c + ε)` with `ε ~ N(0, I)`.

use super::LabeledFeature;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<LabeledFeature>,
    pub test: Vec<LabeledFeature>,
    /// Generating centre of each class, indexed by label.
    pub centers: Vec<Vec<f64>>,
    pub dim: usize,
}

pub fn gen_synthetic(
    n_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if n_classes == 0 || dim == 0 || train_per_class == 0 || test_per_class == 0 {
        return Err(Error::invalid("class, dimension and per-class counts must be positive"));
    }
    if n_classes >= 1 << 31 {
        return Err(Error::invalid("too many classes for 31-bit labels"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }
    let mut rng = Rng::new(seed);
    let scale = separation * (6.0 / dim as f64).sqrt();
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| scale * rng.next_f64()).collect())
        .collect();

    let draw = |label: usize, rng: &mut Rng| {
        let features = centers[label]
            .iter()
            .map(|m| (m + rng.standard_normal()).max(0.0))
            .collect();
        LabeledFeature::new(label as u32, features)
    };
    // Interleave classes so a file read front-to-back is not class-sorted.
    let mut train = Vec::with_capacity(n_classes * train_per_class);
    for _ in 0..train_per_class {
        for c in 0..n_classes {
            train.push(draw(c, &mut rng));
        }
    }
    let mut test = Vec::with_capacity(n_classes * test_per_class);
    for _ in 0..test_per_class {
        for c in 0..n_classes {
            test.push(draw(c, &mut rng));
        }
    }
    Ok(SyntheticData {
        train,
        test,
        centers,
        dim,
    })
}
