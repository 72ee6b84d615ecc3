use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixup strength; `alpha == 0` disables augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MixupConfig {
    pub alpha: f64,
}

impl MixupConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixup alpha must be finite and non-negative, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn disabled() -> Self {
        Self { alpha: 0.0 }
    }

    pub fn enabled(&self) -> bool {
        self.alpha > 0.0
    }
}

/// `Beta(alpha, alpha)` draw as `G1 / (G1 + G2)` with `G_i ~ Gamma(alpha, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("beta shape {alpha}: {e}")))?;
    loop {
        let a = gamma.sample(rng);
        let b = gamma.sample(rng);
        let s = a + b;
        if s > 0.0 && s.is_finite() {
            return Ok(a / s);
        }
    }
}

/// Convex combinations `gamma_i x_i + (1 - gamma_i) x_{J_i}` of features and
/// of soft labels, for caller-supplied coefficients and partners.
///
/// `features` is `n x dim`, `targets` is `n x n_classes`; both are rewritten.
pub fn mixup_with(
    features: &mut [f64],
    dim: usize,
    targets: &mut [f64],
    n_classes: usize,
    gammas: &[f64],
    partners: &[usize],
) -> Result<()> {
    let n = gammas.len();
    if features.len() != n * dim || targets.len() != n * n_classes || partners.len() != n {
        return Err(Error::ShapeMismatch("mixup batch shapes disagree".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidParameter(format!("mixing coefficient {g} outside [0, 1]")));
    }
    if partners.iter().any(|&j| j >= n) {
        return Err(Error::InvalidParameter("mixup partner index out of range".into()));
    }
    let x0 = features.to_vec();
    let y0 = targets.to_vec();
    for i in 0..n {
        let (g, j) = (gammas[i], partners[i]);
        for k in 0..dim {
            features[i * dim + k] = g * x0[i * dim + k] + (1.0 - g) * x0[j * dim + k];
        }
        for k in 0..n_classes {
            targets[i * n_classes + k] = g * y0[i * n_classes + k] + (1.0 - g) * y0[j * n_classes + k];
        }
    }
    Ok(())
}

/// Mixup of a batch: one `Beta(alpha, alpha)` coefficient and one uniform
/// partner within the batch per sample. No-op when disabled.
pub fn mixup<R: Rng + ?Sized>(
    features: &mut [f64],
    dim: usize,
    targets: &mut [f64],
    n_classes: usize,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.alpha < 0.0 || !cfg.alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("mixup alpha {} is negative", cfg.alpha)));
    }
    if !cfg.enabled() {
        return Ok(());
    }
    let n = targets.len() / n_classes;
    if n < 2 {
        return Err(Error::InvalidInput("mixup needs a batch of at least 2".into()));
    }
    let mut gammas = Vec::with_capacity(n);
    let mut partners = Vec::with_capacity(n);
    for _ in 0..n {
        gammas.push(sample_beta(cfg.alpha, rng)?);
        partners.push(rng.random_range(0..n));
    }
    mixup_with(features, dim, targets, n_classes, &gammas, &partners)
}
