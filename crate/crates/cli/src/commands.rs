use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use poolcal::metrics::{self, BinningSpec};
use poolcal::pipelines::{self, Method, MetricReport, PipelineResult, RepeatedSummary};
use poolcal::pooling::pool;
use poolcal::synth::{build_ensemble, HarnessData};
use poolcal::{scale_all, EnsemblePredictions, LabeledPredictions};

use crate::error::{CliError, CliResult};
use crate::io::{self, sig6, Manifest, ManifestEntry, Role};
use crate::report::{MethodReport, Metrics, OodReport, ReportFile};
use crate::{CalibrationArgs, DistanceArgs, MetricsArgs, OodArgs, PipelineArgs, SimulateArgs, SweepArgs};

const SUMMARY_HEADER: &str = "method  rule          accuracy    ece%       nll     brier   entropy  temperature";

fn summary_line(method: &str, rule: &str, m: &MetricReport, taus: &[f64]) -> String {
    let tau = match taus {
        [] => "-".to_string(),
        [t] => format!("{}", sig6(*t)),
        many => format!("{} per member", many.len()),
    };
    format!(
        "{method:<7} {rule:<12} {:>9.4} {:>7.3} {:>9.4} {:>9.4} {:>9.4}  {tau}",
        m.accuracy,
        100.0 * m.ece,
        m.nll,
        m.brier,
        m.mean_entropy
    )
}

fn json_text<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn dc_if_binary(p: &LabeledPredictions) -> CliResult<Option<f64>> {
    Ok(if p.n_classes() == 2 { Some(metrics::dc_score(p)?) } else { None })
}

pub fn metrics(args: &MetricsArgs) -> CliResult<String> {
    let preds = io::read_predictions(&args.pred_file)?;
    let bins = BinningSpec::equal_width(args.bins)?;
    let m = MetricReport::compute(&preds, &bins)?;
    let reliability = metrics::reliability(&preds, &bins)?;
    let report = ReportFile {
        command: "metrics".into(),
        n_samples: preds.len(),
        n_classes: preds.n_classes(),
        bins: args.bins,
        members: None,
        metrics: Some(Metrics::new(&m, dc_if_binary(&preds)?)),
        methods: Vec::new(),
        ood: None,
    };
    match &args.out {
        Some(dir) => {
            io::write_json(&dir.join("report.json"), &report)?;
            io::atomic_write(&dir.join("reliability.csv"), io::reliability_csv(&reliability).as_bytes())?;
            Ok(format!("{SUMMARY_HEADER}\n{}\n", summary_line("-", "-", &m, &[])))
        }
        None => json_text(&report),
    }
}

fn parse_method(s: &str) -> CliResult<Method> {
    Ok(s.parse::<Method>()?)
}

fn missing_val(manifest: &Path, e: poolcal::Error) -> CliError {
    match e {
        poolcal::Error::MissingValidation(_) => CliError::Data(format!(
            "{}: {e}; the manifest needs members with role \"val\"",
            manifest.display()
        )),
        other => other.into(),
    }
}

pub fn pipeline(args: &PipelineArgs) -> CliResult<String> {
    let method = parse_method(&args.method)?;
    let cfg = args.calibration.config(method)?;
    let loaded = io::load_manifest(&args.manifest)?;
    let test = loaded.require_test(&args.manifest)?;
    let result = pipelines::run(loaded.val.as_ref(), test, &cfg).map_err(|e| missing_val(&args.manifest, e))?;
    let report = ReportFile {
        command: "pipeline".into(),
        n_samples: test.n_samples(),
        n_classes: test.n_classes(),
        bins: cfg.binning.n_bins(),
        members: Some(test.size()),
        metrics: None,
        methods: vec![MethodReport::new(&result, dc_if_binary(&result.test_predictions)?)],
        ood: None,
    };
    match &args.out {
        Some(dir) => {
            io::write_json(&dir.join("report.json"), &report)?;
            io::atomic_write(&dir.join("reliability.csv"), io::reliability_csv(&result.reliability).as_bytes())?;
            io::write_predictions(&dir.join("predictions.csv"), &result.test_predictions)?;
            Ok(format!("{SUMMARY_HEADER}\n{}\n", pipeline_line(&result)))
        }
        None => json_text(&report),
    }
}

fn pipeline_line(r: &PipelineResult) -> String {
    summary_line(&r.method.to_string(), &r.rule.to_string(), &r.metrics, &r.fitted_temperatures)
}

fn with_ids(p: &LabeledPredictions, prefix: &str) -> CliResult<LabeledPredictions> {
    let ids = (0..p.len()).map(|i| format!("{prefix}-{i:05}")).collect();
    Ok(p.clone().with_sample_ids(ids)?)
}

fn write_role(
    dir: &Path,
    role: Role,
    name: &str,
    ensemble: &EnsemblePredictions,
    entries: &mut Vec<ManifestEntry>,
) -> CliResult<()> {
    for (id, member) in ensemble.member_ids().iter().zip(ensemble.members()) {
        let rel = PathBuf::from(name).join(format!("{id}.csv"));
        io::write_predictions(&dir.join(&rel), &with_ids(member, name)?)?;
        entries.push(ManifestEntry {
            member_id: id.clone(),
            role,
            path: rel,
        });
    }
    Ok(())
}

/// Writes a harness run in the manifest layout under `dir`.
pub fn write_harness(dir: &Path, data: &HarnessData, config: &poolcal::synth::HarnessConfig) -> CliResult<()> {
    let mut manifest = Manifest::default();
    write_role(dir, Role::Val, "val", &data.val, &mut manifest.members)?;
    write_role(dir, Role::Test, "test", &data.test, &mut manifest.members)?;
    if let Some(ood) = &data.ood {
        write_role(dir, Role::Ood, "ood", ood, &mut manifest.members)?;
    }
    let mut artifact = |name: &str, file: &str, bytes: String| -> CliResult<()> {
        io::atomic_write(&dir.join(file), bytes.as_bytes())?;
        manifest.artifacts.insert(name.into(), PathBuf::from(file));
        Ok(())
    };
    artifact("posterior_val", "posterior_val.csv", io::predictions_csv(&with_ids(&data.val_posterior, "val")?))?;
    artifact("posterior_test", "posterior_test.csv", io::predictions_csv(&with_ids(&data.test_posterior, "test")?))?;
    let dim = data.task.input_dim();
    let ids = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}-{i:05}")).collect::<Vec<_>>();
    artifact(
        "embeddings_train",
        "embeddings_train.csv",
        io::embeddings_csv(&ids("train", data.train_features.len() / dim), &data.train_features, dim),
    )?;
    artifact(
        "embeddings_test",
        "embeddings_test.csv",
        io::embeddings_csv(&ids("test", data.test_features.len() / dim), &data.test_features, dim),
    )?;
    artifact("config", "harness.json", json_text(config)?)?;
    io::write_manifest(&dir.join("manifest.json"), &manifest)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<String> {
    let cfg = args.harness.config()?;
    let data = build_ensemble(&cfg, &cfg.member_seeds())?;
    write_harness(&args.out_dir, &data, &cfg)?;
    Ok(format!(
        "wrote {} members ({} val, {} test, {} ood samples) to {}\n",
        cfg.members,
        cfg.val_n,
        cfg.test_n,
        cfg.ood_n,
        args.out_dir.join("manifest.json").display()
    ))
}

fn push_summary(out: &mut String, method: &str, axis: &str, s: &RepeatedSummary) {
    for ((name, mean), (_, std)) in s.mean.named().iter().zip(s.std.named()) {
        let _ = writeln!(out, "{method},{axis},{name},{},{}", sig6(*mean), sig6(std));
    }
}

fn sweep_cells(
    out: &mut String,
    axis: &str,
    val: Option<&EnsemblePredictions>,
    test: &EnsemblePredictions,
    cal: &CalibrationArgs,
    methods: &[Method],
    seeds: &[u64],
) -> CliResult<()> {
    for &m in methods {
        let s = pipelines::repeated_validation(val, test, &cal.config(m)?, seeds)?;
        push_summary(out, &m.to_string(), axis, &s);
    }
    Ok(())
}

/// Mean and spread over the uncalibrated members, plus mean confidence.
fn member_rows(out: &mut String, axis: &str, test: &EnsemblePredictions, bins: &BinningSpec) -> CliResult<()> {
    let k = test.size() as f64;
    let mut per_member: Vec<Vec<(&'static str, f64)>> = Vec::new();
    for m in test.members() {
        let mut row = MetricReport::compute(m, bins)?.named().to_vec();
        let conf = (0..m.len()).map(|i| m.confidence(i)).sum::<f64>() / m.len() as f64;
        row.push(("mean_confidence", conf));
        per_member.push(row);
    }
    for j in 0..per_member[0].len() {
        let values: Vec<f64> = per_member.iter().map(|r| r[j].1).collect();
        let mean = values.iter().sum::<f64>() / k;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(out, "members,{axis},{},{},{}", per_member[0][j].0, sig6(mean), sig6(std));
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> CliResult<String> {
    let methods = args.methods.iter().map(|m| parse_method(m)).collect::<CliResult<Vec<_>>>()?;
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => s.clone(),
        None => (0..args.repeats as u64).collect(),
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("need at least one repeat".into()));
    }
    let mut out = String::from("method,size_or_alpha,metric,mean,std\n");
    if let Some(sizes) = &args.sizes {
        let manifest = args
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::Usage("--sizes needs --manifest".into()))?;
        let loaded = io::load_manifest(manifest)?;
        let test = loaded.require_test(manifest)?;
        if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > test.size()) {
            return Err(CliError::Usage(format!("size {bad} outside 1..={}", test.size())));
        }
        for &size in sizes {
            let val = loaded.val.as_ref().map(|v| v.prefix(size)).transpose()?;
            sweep_cells(
                &mut out,
                &size.to_string(),
                val.as_ref(),
                &test.prefix(size)?,
                &args.calibration,
                &methods,
                &seeds,
            )
            .map_err(|e| match e {
                CliError::Data(msg) => CliError::Data(format!("{}: {msg}", manifest.display())),
                other => other,
            })?;
        }
    } else if let Some(alphas) = &args.mixup_alphas {
        let bins = BinningSpec::equal_width(args.calibration.bins)?;
        for &alpha in alphas {
            let mut h = args.harness.clone();
            h.mixup_alpha = alpha;
            let cfg = h.config()?;
            let data = build_ensemble(&cfg, &cfg.member_seeds())?;
            let axis = alpha.to_string();
            member_rows(&mut out, &axis, &data.test, &bins)?;
            sweep_cells(&mut out, &axis, Some(&data.val), &data.test, &args.calibration, &methods, &seeds)?;
        }
    }
    match &args.out {
        Some(path) => {
            io::atomic_write(path, out.as_bytes())?;
            Ok(format!("wrote {} rows to {}\n", out.lines().count() - 1, path.display()))
        }
        None => Ok(out),
    }
}

/// Shifted-set predictions: a pooled CSV, or a manifest to pool.
fn load_out_set(path: &Path, cal: &CalibrationArgs) -> CliResult<LabeledPredictions> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let loaded = io::load_manifest(path)?;
        let ensemble = loaded
            .ood
            .as_ref()
            .or(loaded.test.as_ref())
            .ok_or_else(|| CliError::Data(format!("{}: no ood or test members", path.display())))?;
        Ok(pool(ensemble, &cal.rule()?)?)
    } else {
        io::read_predictions(path)
    }
}

pub fn ood(args: &OodArgs) -> CliResult<String> {
    let cfg = args.calibration.config(Method::D)?;
    let loaded = io::load_manifest(&args.in_manifest)?;
    let test = loaded.require_test(&args.in_manifest)?;
    let shifted = load_out_set(&args.out_file, &args.calibration)?;
    if shifted.n_classes() != test.n_classes() {
        return Err(CliError::Data(format!(
            "{} has {} classes, {} has {}",
            args.out_file.display(),
            shifted.n_classes(),
            args.in_manifest.display(),
            test.n_classes()
        )));
    }
    let pooled_in = pool(test, &cfg.rule)?;
    let gap_a = metrics::entropy_median_gap(&pooled_in, &shifted)?;
    let (gap_d, tau_d) = match loaded.val.as_ref() {
        Some(val) => {
            let d = pipelines::run_method_d(Some(val), test, &cfg)?;
            let tau = d.fitted_temperatures[0];
            let gap = metrics::entropy_median_gap(&d.test_predictions, &scale_all(&shifted, tau)?)?;
            (Some(gap), Some(tau))
        }
        None => (None, None),
    };
    let report = ReportFile {
        command: "ood".into(),
        n_samples: test.n_samples(),
        n_classes: test.n_classes(),
        bins: cfg.binning.n_bins(),
        members: Some(test.size()),
        metrics: None,
        methods: Vec::new(),
        ood: Some(OodReport {
            rule: cfg.rule.to_string(),
            in_samples: pooled_in.len(),
            out_samples: shifted.len(),
            gap_a: sig6(gap_a),
            gap_d: gap_d.map(sig6),
            tau_d: tau_d.map(sig6),
        }),
    };
    match &args.out {
        Some(path) => {
            io::write_json(path, &report)?;
            let d = gap_d.map_or("-".to_string(), |g| format!("{:.4}", g));
            Ok(format!("entropy gap  a: {gap_a:.4}  d: {d}\n"))
        }
        None => json_text(&report),
    }
}

pub fn distance(args: &DistanceArgs) -> CliResult<String> {
    let preds = io::read_predictions(&args.pred_file)?;
    let test_emb = io::read_embeddings(&args.test_embeddings)?;
    let train_emb = io::read_embeddings(&args.train_embeddings)?;
    let pred_ids = preds.sample_ids().unwrap_or(&[]);
    let emb_ids = test_emb.ids().unwrap_or(&[]);
    if let Some(i) = (0..pred_ids.len().min(emb_ids.len())).find(|&i| pred_ids[i] != emb_ids[i]) {
        return Err(CliError::Data(format!(
            "sample {i}: {} has id {:?} but {} has {:?}",
            args.pred_file.display(),
            pred_ids[i],
            args.test_embeddings.display(),
            emb_ids[i]
        )));
    }
    if pred_ids.len() != emb_ids.len() {
        let (longer, id) = if pred_ids.len() > emb_ids.len() {
            (&args.pred_file, &pred_ids[emb_ids.len()])
        } else {
            (&args.test_embeddings, &emb_ids[pred_ids.len()])
        };
        return Err(CliError::Data(format!(
            "{} has an extra sample {id:?} with no counterpart",
            longer.display()
        )));
    }
    let bins = metrics::distance_binned_metrics(&preds, &test_emb, &train_emb, args.quantile_bins)?;
    let mut out = String::from(
        "bin,count,min_distance,max_distance,mean_distance,reliability_gap,error_rate,nll,mean_entropy\n",
    );
    for (b, d) in bins.iter().enumerate() {
        let _ = writeln!(
            out,
            "{b},{},{},{},{},{},{},{},{}",
            d.count,
            sig6(d.min_distance),
            sig6(d.max_distance),
            sig6(d.mean_distance),
            sig6(d.reliability_gap),
            sig6(d.error_rate),
            sig6(d.nll),
            sig6(d.mean_entropy)
        );
    }
    match &args.out {
        Some(path) => {
            io::atomic_write(path, out.as_bytes())?;
            Ok(format!("wrote {} bins to {}\n", bins.len(), path.display()))
        }
        None => Ok(out),
    }
}
