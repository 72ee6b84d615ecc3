//! Points on the probability simplex and the elementary operations on them.
//!
//! Most functions come in two flavours: a slice version (`*_row`) used by the
//! matrix code, and a method on [`ProbVector`] for callers holding a single
//! validated distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted when constructing a distribution.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Lower clamp applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// `ln(max(p, LOG_CLAMP))`.
#[inline]
pub fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0).ln()
}

/// A probability distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `probs` and renormalizes it by its sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, SIMPLEX_TOLERANCE)
    }

    /// Like [`ProbVector::new`] but with a caller-chosen tolerance on the sum.
    pub fn with_tolerance(mut probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        normalize_row(&mut probs, tolerance)?;
        Ok(Self(probs))
    }

    /// Uniform distribution over `n_classes` classes.
    pub fn uniform(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        Ok(Self(vec![1.0 / n_classes as f64; n_classes]))
    }

    /// One-hot distribution on `class`.
    pub fn one_hot(class: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 || class >= n_classes {
            return Err(Error::InvalidInput(format!(
                "class {class} out of range for {n_classes} classes"
            )));
        }
        let mut v = vec![0.0; n_classes];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    /// `(argmax, max)`, ties resolved to the lowest index.
    pub fn top_prediction(&self) -> (usize, f64) {
        top_prediction_row(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy_row(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks simplex membership within `tolerance` and divides the row by its sum.
pub(crate) fn normalize_row(row: &mut [f64], tolerance: f64) -> Result<()> {
    if row.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {}",
            row.len()
        )));
    }
    let mut sum = 0.0;
    for &p in row.iter() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidInput(format!(
                "probability {p} is not a finite non-negative number"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::InvalidInput(format!(
            "probabilities sum to {sum}, outside tolerance {tolerance}"
        )));
    }
    if sum != 1.0 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite logit {x}")));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(ProbVector(out))
}

/// In-place softmax of finite values.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// `(argmax, max)` of a row; the first maximal index wins.
pub fn top_prediction_row(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy_row(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// See [`ProbVector::entropy`].
pub fn entropy(p: &ProbVector) -> f64 {
    p.entropy()
}

/// See [`ProbVector::top_prediction`].
pub fn top_prediction(p: &ProbVector) -> (usize, f64) {
    p.top_prediction()
}
