//! The four orderings of pooling and temperature scaling:
//!
//! - **A** pool the raw members, no calibration;
//! - **B** fit one temperature per member on validation data, scale, then pool;
//! - **C** fit one shared temperature on the pooled-after-scaling validation
//!   predictions, apply it to every member, then pool;
//! - **D** pool first, then fit and apply a single temperature to the pooled
//!   predictions.
//!
//! Validation data only ever reaches the test predictions through the fitted
//! temperatures.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    fit_temperature, fit_temperature_with, scale_all, GridSpec, ScoringRule, TemperatureFit,
};
use crate::error::{Error, Result};
use crate::metrics::{self, BinningSpec, ReliabilityReport};
use crate::pooling::{pool, PoolingRule};
use crate::predictions::{EnsemblePredictions, LabeledPredictions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    A,
    B,
    C,
    D,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::A, Method::B, Method::C, Method::D];

    pub fn needs_validation(self) -> bool {
        self != Method::A
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::A => "a",
            Method::B => "b",
            Method::C => "c",
            Method::D => "d",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Method::A),
            "b" => Ok(Method::B),
            "c" => Ok(Method::C),
            "d" => Ok(Method::D),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub rule: PoolingRule,
    pub grid: GridSpec,
    pub scoring: ScoringRule,
    pub binning: BinningSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::D,
            rule: PoolingRule::default(),
            grid: GridSpec::default(),
            scoring: ScoringRule::default(),
            binning: BinningSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }
}

/// Test-set metrics of one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Fraction in `[0, 1]`.
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub mean_entropy: f64,
}

impl MetricReport {
    pub fn compute(preds: &LabeledPredictions, bins: &BinningSpec) -> Result<Self> {
        Ok(Self {
            accuracy: preds.accuracy(),
            ece: metrics::ece(preds, bins)?,
            nll: metrics::nll(preds)?,
            brier: metrics::brier(preds)?,
            mean_entropy: metrics::mean_entropy(preds)?,
        })
    }

    fn as_array(&self) -> [f64; 5] {
        [self.accuracy, self.ece, self.nll, self.brier, self.mean_entropy]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            accuracy: a[0],
            ece: a[1],
            nll: a[2],
            brier: a[3],
            mean_entropy: a[4],
        }
    }

    /// `(name, value)` pairs in a fixed order, ECE reported as a fraction.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("accuracy", self.accuracy),
            ("ece", self.ece),
            ("nll", self.nll),
            ("brier", self.brier),
            ("mean_entropy", self.mean_entropy),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub method: Method,
    pub rule: PoolingRule,
    pub test_predictions: LabeledPredictions,
    /// Empty for A, one per member for B, a single value for C and D.
    pub fitted_temperatures: Vec<f64>,
    /// The grid searches behind `fitted_temperatures`, in the same order.
    pub fits: Vec<TemperatureFit>,
    pub metrics: MetricReport,
    pub reliability: ReliabilityReport,
}

impl PipelineResult {
    fn build(
        cfg: &PipelineConfig,
        test_predictions: LabeledPredictions,
        fits: Vec<TemperatureFit>,
    ) -> Result<Self> {
        let metrics = MetricReport::compute(&test_predictions, &cfg.binning)?;
        let reliability = metrics::reliability(&test_predictions, &cfg.binning)?;
        Ok(Self {
            method: cfg.method,
            rule: cfg.rule.clone(),
            test_predictions,
            fitted_temperatures: fits.iter().map(|f| f.tau_star).collect(),
            fits,
            metrics,
            reliability,
        })
    }
}

fn check_pair(val: &EnsemblePredictions, test: &EnsemblePredictions) -> Result<()> {
    if val.size() != test.size() {
        return Err(Error::ShapeMismatch(format!(
            "validation ensemble has {} members, test ensemble {}",
            val.size(),
            test.size()
        )));
    }
    if val.member_ids() != test.member_ids() {
        return Err(Error::ShapeMismatch(
            "validation and test member ids differ".into(),
        ));
    }
    if val.n_classes() != test.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "validation has {} classes, test {}",
            val.n_classes(),
            test.n_classes()
        )));
    }
    Ok(())
}

fn require_val<'a>(
    val: Option<&'a EnsemblePredictions>,
    test: &EnsemblePredictions,
    method: Method,
) -> Result<&'a EnsemblePredictions> {
    let val = val.ok_or(match method {
        Method::B => Error::MissingValidation("method b fits per-member temperatures"),
        Method::C => Error::MissingValidation("method c fits a shared temperature"),
        _ => Error::MissingValidation("method d fits the pooled temperature"),
    })?;
    check_pair(val, test)?;
    if val.n_samples() == 0 {
        return Err(Error::Empty("validation set"));
    }
    Ok(val)
}

/// Pools the test members without calibration.
pub fn run_method_a(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    if let Some(val) = val {
        check_pair(val, test)?;
    }
    if test.n_samples() == 0 {
        return Err(Error::Empty("test set"));
    }
    let cfg = cfg.with_method(Method::A);
    PipelineResult::build(&cfg, pool(test, &cfg.rule)?, Vec::new())
}

/// Scales every member with its own validation temperature, then pools.
pub fn run_method_b(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let val = require_val(val, test, Method::B)?;
    let fits = val
        .members()
        .iter()
        .map(|m| fit_temperature(m, &cfg.grid, cfg.scoring))
        .collect::<Result<Vec<_>>>()?;
    let members = test
        .members()
        .iter()
        .zip(&fits)
        .map(|(m, f)| scale_all(m, f.tau_star))
        .collect::<Result<Vec<_>>>()?;
    let scaled = EnsemblePredictions::new(members, test.member_ids().to_vec())?;
    let cfg = cfg.with_method(Method::B);
    PipelineResult::build(&cfg, pool(&scaled, &cfg.rule)?, fits)
}

fn scale_members(e: &EnsemblePredictions, tau: f64) -> Result<EnsemblePredictions> {
    e.map_members(|m| scale_all(m, tau))
}

/// Fits one temperature shared by all members against the score of the
/// pooled-after-scaling validation predictions.
pub fn run_method_c(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let val = require_val(val, test, Method::C)?;
    let fit = fit_temperature_with(&cfg.grid, cfg.scoring, |t| {
        pool(&scale_members(val, t)?, &cfg.rule)
    })?;
    let out = pool(&scale_members(test, fit.tau_star)?, &cfg.rule)?;
    let cfg = cfg.with_method(Method::C);
    PipelineResult::build(&cfg, out, vec![fit])
}

/// Pools first, then temperature-scales the pooled predictions.
pub fn run_method_d(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let val = require_val(val, test, Method::D)?;
    let pooled_val = pool(val, &cfg.rule)?;
    let fit = fit_temperature(&pooled_val, &cfg.grid, cfg.scoring)?;
    let out = scale_all(&pool(test, &cfg.rule)?, fit.tau_star)?;
    let cfg = cfg.with_method(Method::D);
    PipelineResult::build(&cfg, out, vec![fit])
}

/// Runs `cfg.method`.
pub fn run(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    match cfg.method {
        Method::A => run_method_a(val, test, cfg),
        Method::B => run_method_b(val, test, cfg),
        Method::C => run_method_c(val, test, cfg),
        Method::D => run_method_d(val, test, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub size: usize,
    pub result: PipelineResult,
}

/// Runs every method on the first `m` members for each `m` in `sizes`.
pub fn ensemble_size_sweep(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
    methods: &[Method],
    sizes: &[usize],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(methods.len() * sizes.len());
    for &size in sizes {
        let test_m = test.prefix(size)?;
        let val_m = val.map(|v| v.prefix(size)).transpose()?;
        for &method in methods {
            let result = run(val_m.as_ref(), &test_m, &cfg.with_method(method))?;
            cells.push(SweepCell {
                method,
                size,
                result,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PipelineResult>,
    /// First member alone, temperature scaled on validation data.
    pub baseline: PipelineResult,
}

/// One result per configuration plus the single-model baseline.
pub fn compare_methods(
    val: &EnsemblePredictions,
    test: &EnsemblePredictions,
    configs: &[PipelineConfig],
) -> Result<ComparisonReport> {
    let first = configs
        .first()
        .ok_or(Error::Empty("comparison needs at least one configuration"))?;
    let rows = configs
        .iter()
        .map(|cfg| run(Some(val), test, cfg))
        .collect::<Result<Vec<_>>>()?;
    let base_cfg = PipelineConfig {
        method: Method::D,
        rule: PoolingRule::average(),
        ..first.clone()
    };
    let baseline = run_method_d(Some(&val.prefix(1)?), &test.prefix(1)?, &base_cfg)?;
    Ok(ComparisonReport { rows, baseline })
}

/// Bootstrap resample (with replacement, same size) of the validation samples.
pub fn resample_validation(val: &EnsemblePredictions, seed: u64) -> EnsemblePredictions {
    let n = val.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    val.select(&idx)
}

/// Mean and sample standard deviation of metrics over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedSummary {
    pub method: Method,
    pub repeats: usize,
    pub mean: MetricReport,
    pub std: MetricReport,
    pub temperatures: Vec<Vec<f64>>,
}

/// Runs `cfg` once per seed, each time on a bootstrap resample of `val`.
pub fn repeated_validation(
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<RepeatedSummary> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let resampled = match cfg.method {
            Method::A => None,
            _ => val.map(|v| resample_validation(v, seed)),
        };
        let v = if cfg.method.needs_validation() { resampled.as_ref() } else { val };
        runs.push(run(v, test, cfg)?);
    }
    // deviations from the first run keep identical runs exactly at std 0
    let r = runs.len() as f64;
    let base = runs[0].metrics.as_array();
    let mut sum_d = [0.0; 5];
    let mut sum_d2 = [0.0; 5];
    for run in &runs {
        for (i, x) in run.metrics.as_array().into_iter().enumerate() {
            let d = x - base[i];
            sum_d[i] += d;
            sum_d2[i] += d * d;
        }
    }
    let mean: [f64; 5] = std::array::from_fn(|i| base[i] + sum_d[i] / r);
    let std: [f64; 5] = std::array::from_fn(|i| {
        if runs.len() > 1 {
            ((sum_d2[i] - sum_d[i] * sum_d[i] / r) / (r - 1.0)).max(0.0).sqrt()
        } else {
            0.0
        }
    });
    Ok(RepeatedSummary {
        method: cfg.method,
        repeats: runs.len(),
        mean: MetricReport::from_array(mean),
        std: MetricReport::from_array(std),
        temperatures: runs.into_iter().map(|r| r.fitted_temperatures).collect(),
    })
}
