//! JSON report written by the metric, pipeline and OOD commands.

use poolcal::calibration::TemperatureFit;
use poolcal::pipelines::{MetricReport, PipelineResult};
use serde::{Deserialize, Serialize};

use crate::io::sig6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Fraction in `[0, 1]`.
    pub ece: f64,
    pub ece_percent: f64,
    pub nll: f64,
    pub brier: f64,
    pub mean_entropy: f64,
    /// Only for two-class prediction sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc_score: Option<f64>,
}

impl Metrics {
    pub fn new(m: &MetricReport, dc_score: Option<f64>) -> Self {
        Self {
            accuracy: sig6(m.accuracy),
            ece: sig6(m.ece),
            ece_percent: sig6(100.0 * m.ece),
            nll: sig6(m.nll),
            brier: sig6(m.brier),
            mean_entropy: sig6(m.mean_entropy),
            dc_score: dc_score.map(sig6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub tau_star: f64,
    pub scoring_rule: String,
    /// `[τ, score]` pairs.
    pub grid: Vec<[f64; 2]>,
}

impl From<&TemperatureFit> for FitTrace {
    fn from(f: &TemperatureFit) -> Self {
        Self {
            tau_star: sig6(f.tau_star),
            scoring_rule: f.scoring_rule.to_string(),
            grid: f.grid.iter().map(|&(t, s)| [sig6(t), sig6(s)]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub rule: String,
    pub metrics: Metrics,
    pub temperatures: Vec<f64>,
    pub fits: Vec<FitTrace>,
}

impl MethodReport {
    pub fn new(r: &PipelineResult, dc_score: Option<f64>) -> Self {
        Self {
            method: r.method.to_string(),
            rule: r.rule.to_string(),
            metrics: Metrics::new(&r.metrics, dc_score),
            temperatures: r.fitted_temperatures.iter().copied().map(sig6).collect(),
            fits: r.fits.iter().map(FitTrace::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub rule: String,
    pub in_samples: usize,
    pub out_samples: usize,
    /// Median entropy of the out-set minus that of the in-set, raw pool.
    pub gap_a: f64,
    /// Same after pool-then-calibrate; absent without validation data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub command: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodReport>,
}
