//! Temperature scaling and grid-search temperature fitting.

use std::fmt;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::predictions::LabeledPredictions;
use crate::prob::{clamped_ln, ProbVector};

/// Proper scoring rule minimized when fitting a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringRule {
    #[default]
    Nll,
    Brier,
}

impl ScoringRule {
    pub fn score(self, preds: &LabeledPredictions) -> Result<f64> {
        match self {
            ScoringRule::Nll => metrics::nll(preds),
            ScoringRule::Brier => metrics::brier(preds),
        }
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringRule::Nll => "nll",
            ScoringRule::Brier => "brier",
        })
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nll" => Ok(ScoringRule::Nll),
            "brier" => Ok(ScoringRule::Brier),
            other => Err(Error::InvalidParameter(format!("unknown scoring rule {other:?}"))),
        }
    }
}

/// `count` temperatures equally spaced in `log τ` over `[tau_min, tau_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tau_min: f64,
    pub tau_max: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            tau_min: 1e-2,
            tau_max: 10.0,
            count: 100,
        }
    }
}

impl GridSpec {
    pub fn new(tau_min: f64, tau_max: f64, count: usize) -> Result<Self> {
        let g = Self {
            tau_min,
            tau_max,
            count,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min.is_finite() && self.tau_min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau_min must be positive, got {}",
                self.tau_min
            )));
        }
        if !(self.tau_max.is_finite() && self.tau_max > self.tau_min) {
            return Err(Error::InvalidParameter(format!(
                "tau_max {} must exceed tau_min {}",
                self.tau_max, self.tau_min
            )));
        }
        if self.count < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 points, got {}",
                self.count
            )));
        }
        Ok(())
    }

    /// The grid temperatures in increasing order; endpoints are exact.
    pub fn temperatures(&self) -> Vec<f64> {
        let (lo, hi) = (self.tau_min.ln(), self.tau_max.ln());
        let step = (hi - lo) / (self.count - 1) as f64;
        let mut taus: Vec<f64> = (0..self.count)
            .map(|i| (lo + step * i as f64).exp())
            .collect();
        taus[0] = self.tau_min;
        taus[self.count - 1] = self.tau_max;
        taus
    }

    /// Ratio between consecutive grid temperatures.
    pub fn step_ratio(&self) -> f64 {
        (self.tau_max / self.tau_min).powf(1.0 / (self.count - 1) as f64)
    }
}

/// Outcome of a grid search over temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub tau_star: f64,
    pub scoring_rule: ScoringRule,
    /// `(τ, score)` for every grid point, τ increasing.
    pub grid: Vec<(f64, f64)>,
}

impl TemperatureFit {
    pub fn best_score(&self) -> f64 {
        self.grid
            .iter()
            .find(|(t, _)| *t == self.tau_star)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "temperature must be finite and positive, got {tau}"
        )))
    }
}

/// Writes `softmax(ln(clamp(p)) / tau)` into `out`.
fn scale_row_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, &p) in out.iter_mut().zip(row) {
        *o = clamped_ln(p) / tau;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Tempered distribution `softmax(log p / tau)`, i.e. `p^(1/tau)` renormalized.
pub fn scale(p: &ProbVector, tau: f64) -> Result<ProbVector> {
    check_tau(tau)?;
    let mut out = vec![0.0; p.n_classes()];
    scale_row_into(p.as_slice(), tau, &mut out);
    Ok(ProbVector::from_vec_unchecked(out))
}

/// Row-wise [`scale`]; labels and ids are unchanged.
pub fn scale_all(preds: &LabeledPredictions, tau: f64) -> Result<LabeledPredictions> {
    check_tau(tau)?;
    let c = preds.n_classes();
    let mut out = vec![0.0; preds.probs().len()];
    for (src, dst) in preds.rows().zip(out.chunks_exact_mut(c)) {
        scale_row_into(src, tau, dst);
    }
    Ok(preds.with_probs_unchecked(out))
}

/// Grid search of `rule(transform(τ))` over `grid`.
///
/// `transform` maps a temperature to the predictions that are scored. The
/// minimizer with the smallest τ wins ties.
pub fn fit_temperature_with<F>(grid: &GridSpec, rule: ScoringRule, transform: F) -> Result<TemperatureFit>
where
    F: Fn(f64) -> Result<LabeledPredictions> + Sync,
{
    grid.validate()?;
    let taus = grid.temperatures();
    let scores = maybe_par_iter!(&taus)
        .map(|&t| rule.score(&transform(t)?))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(TemperatureFit {
        tau_star: taus[best],
        scoring_rule: rule,
        grid: taus.into_iter().zip(scores).collect(),
    })
}

/// Fits the temperature of a single prediction set on validation data.
pub fn fit_temperature(
    preds: &LabeledPredictions,
    grid: &GridSpec,
    rule: ScoringRule,
) -> Result<TemperatureFit> {
    if preds.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    fit_temperature_with(grid, rule, |t| scale_all(preds, t))
}
