//! Browser-independent state and operations behind the wasm bindings.

use poolcal::calibration::scale_all;
use poolcal::metrics::{self, ReliabilityBin};
use poolcal::pipelines::{self, Method, MetricReport, PipelineConfig};
use poolcal::pooling::{pool, PoolingRule};
use poolcal::synth::{build_ensemble, HarnessConfig, Hyperparams, MixupConfig};
use poolcal::{EnsemblePredictions, LabeledPredictions};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSettings {
    pub seed: u64,
    pub members: usize,
    pub mixup_alpha: f64,
    pub steps: usize,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            members: 6,
            mixup_alpha: 1.0,
            steps: 1500,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reliability {
    pub label: String,
    pub temperatures: Vec<f64>,
    pub metrics: MetricReport,
    pub bins: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub metrics: MetricReport,
    pub temperatures: Vec<f64>,
    /// Median entropy on shifted inputs minus that on test inputs.
    pub ood_entropy_gap: f64,
}

/// A trained synthetic ensemble and its validation/test/shifted predictions.
pub struct DemoState {
    val: EnsemblePredictions,
    test: EnsemblePredictions,
    ood: EnsemblePredictions,
    config: PipelineConfig,
}

fn parse_rule(rule: &str) -> Result<PoolingRule, String> {
    rule.parse().map_err(|e: poolcal::Error| e.to_string())
}

fn parse_method(method: &str) -> Result<Method, String> {
    method.parse().map_err(|e: poolcal::Error| e.to_string())
}

impl DemoState {
    pub fn train(settings: DemoSettings) -> Result<Self, String> {
        let cfg = HarnessConfig {
            seed: settings.seed,
            members: settings.members,
            mixup: MixupConfig::new(settings.mixup_alpha).map_err(|e| e.to_string())?,
            test_n: 1000,
            ood_n: 500,
            hyper: Hyperparams {
                steps: settings.steps,
                ..Hyperparams::default()
            },
            ..HarnessConfig::default()
        };
        let data = build_ensemble(&cfg, &cfg.member_seeds()).map_err(|e| e.to_string())?;
        Ok(Self {
            val: data.val,
            test: data.test,
            ood: data.ood.ok_or("harness produced no shifted split")?,
            config: PipelineConfig::default(),
        })
    }

    pub fn members(&self) -> usize {
        self.test.size()
    }

    /// Reliability table of the test predictions under one method and rule.
    pub fn reliability(&self, method: &str, rule: &str) -> Result<Reliability, String> {
        let cfg = PipelineConfig {
            method: parse_method(method)?,
            rule: parse_rule(rule)?,
            ..self.config.clone()
        };
        let r = pipelines::run(Some(&self.val), &self.test, &cfg).map_err(|e| e.to_string())?;
        Ok(Reliability {
            label: format!("{} / {}", r.method, r.rule),
            temperatures: r.fitted_temperatures,
            metrics: r.metrics,
            bins: r.reliability.bins,
        })
    }

    /// The pooled test predictions rescaled at a user-chosen temperature.
    pub fn at_temperature(&self, rule: &str, tau: f64) -> Result<Reliability, String> {
        let pooled = pool(&self.test, &parse_rule(rule)?).map_err(|e| e.to_string())?;
        let scaled = scale_all(&pooled, tau).map_err(|e| e.to_string())?;
        report_for(&scaled, format!("pool then tau = {tau:.3}"), vec![tau], &self.config)
    }

    /// All four methods side by side, with the entropy gap on shifted inputs.
    pub fn compare(&self, rule: &str) -> Result<Vec<ComparisonRow>, String> {
        let rule = parse_rule(rule)?;
        let mut rows = Vec::new();
        for method in Method::ALL {
            let cfg = PipelineConfig {
                method,
                rule: rule.clone(),
                ..self.config.clone()
            };
            let r = pipelines::run(Some(&self.val), &self.test, &cfg).map_err(|e| e.to_string())?;
            let shifted = shifted_predictions(&self.ood, &cfg, &r.fitted_temperatures).map_err(|e| e.to_string())?;
            let gap = metrics::entropy_median_gap(&r.test_predictions, &shifted).map_err(|e| e.to_string())?;
            rows.push(ComparisonRow {
                method: method.to_string(),
                metrics: r.metrics,
                temperatures: r.fitted_temperatures,
                ood_entropy_gap: gap,
            });
        }
        Ok(rows)
    }
}

/// Applies the fitted temperatures of a method to the shifted members.
fn shifted_predictions(
    ood: &EnsemblePredictions,
    cfg: &PipelineConfig,
    taus: &[f64],
) -> poolcal::Result<LabeledPredictions> {
    match cfg.method {
        Method::A => pool(ood, &cfg.rule),
        Method::B => {
            let members = ood
                .members()
                .iter()
                .zip(taus)
                .map(|(m, &t)| scale_all(m, t))
                .collect::<poolcal::Result<Vec<_>>>()?;
            pool(&EnsemblePredictions::new(members, ood.member_ids().to_vec())?, &cfg.rule)
        }
        Method::C => pool(&ood.map_members(|m| scale_all(m, taus[0]))?, &cfg.rule),
        Method::D => scale_all(&pool(ood, &cfg.rule)?, taus[0]),
    }
}

fn report_for(
    preds: &LabeledPredictions,
    label: String,
    temperatures: Vec<f64>,
    cfg: &PipelineConfig,
) -> Result<Reliability, String> {
    let m = MetricReport::compute(preds, &cfg.binning).map_err(|e| e.to_string())?;
    let r = metrics::reliability(preds, &cfg.binning).map_err(|e| e.to_string())?;
    Ok(Reliability {
        label,
        temperatures,
        metrics: m,
        bins: r.bins,
    })
}
