use std::path::{Path, PathBuf};

use approx::assert_abs_diff_eq;
use poolcal::metrics::{self, BinningSpec};
use poolcal::pipelines::MetricReport;
use poolcal_cli::error::{EXIT_DATA, EXIT_OK, EXIT_USAGE};
use poolcal_cli::io::{self, Manifest, ManifestEntry, Role};
use poolcal_cli::report::ReportFile;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["poolcal"];
    full.extend_from_slice(args);
    poolcal_cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(path: &Path) -> ReportFile {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_sim(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "simulate", "--out-dir", s(dir), "--train-n", "200", "--val-n", "40", "--test-n", "150",
        "--ood-n", "60", "--members", "3", "--steps", "150", "--seed", "4",
    ];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), EXIT_OK);
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn metrics_on_hand_fixture() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "p.csv", "sample_id,label,p_0,p_1\na,0,0.6,0.4\nb,1,0.8,0.2\n");
    let out = dir.path().join("out");
    assert_eq!(run(&["metrics", s(&f), "--bins", "2", "--out", s(&out)]), EXIT_OK);
    let r = report(&out.join("report.json"));
    let m = r.metrics.unwrap();
    assert_eq!(m.ece_percent, 20.0);
    assert_eq!(m.ece, 0.2);
    assert!(std::fs::read_to_string(out.join("reliability.csv")).unwrap().starts_with("bin_low,bin_high,count,conf,acc,gap\n"));
}

#[test]
fn metrics_on_one_hot_fixture() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "p.csv", "sample_id,label,p_0,p_1,p_2\na,0,1,0,0\nb,2,0,0,1\n");
    let out = dir.path().join("out");
    assert_eq!(run(&["metrics", s(&f), "--out", s(&out)]), EXIT_OK);
    let m = report(&out.join("report.json")).metrics.unwrap();
    assert_eq!(m.ece, 0.0);
    assert!(m.nll < 1e-9);
    assert_eq!(m.brier, 0.0);
}

#[test]
fn malformed_file_names_the_line() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "bad.csv", "sample_id,label,p_0,p_1\na,0,0.6,0.4\nb,1,0.8,0.3\n");
    assert_eq!(run(&["metrics", s(&f)]), EXIT_DATA);
    let err = poolcal_cli::io::read_predictions(&f).unwrap_err().to_string();
    assert!(err.contains("bad.csv:3"), "{err}");
}

#[test]
fn metrics_round_trip_matches_library() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let member = dir.path().join("test/m01.csv");
    let out = dir.path().join("out");
    assert_eq!(run(&["metrics", s(&member), "--out", s(&out)]), EXIT_OK);
    let got = report(&out.join("report.json")).metrics.unwrap();
    let preds = io::read_predictions(&member).unwrap();
    let want = MetricReport::compute(&preds, &BinningSpec::default()).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1e-12);
    assert!(rel(got.ece, want.ece));
    assert!(rel(got.nll, want.nll));
    assert!(rel(got.brier, want.brier));
    assert!(rel(got.mean_entropy, want.mean_entropy));
    assert!(rel(got.accuracy, want.accuracy));
}

#[test]
fn simulate_writes_a_loadable_manifest() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &["--members", "1"]);
    let m = io::load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.test.as_ref().unwrap().size(), 1);
    assert_eq!(m.val.as_ref().unwrap().n_samples(), 40);
    assert_eq!(m.ood.as_ref().unwrap().n_samples(), 60);
    for key in ["posterior_val", "posterior_test", "embeddings_train", "embeddings_test", "config"] {
        assert!(m.artifacts[key].exists(), "{key}");
    }
}

#[test]
fn single_member_d_equals_c_bytewise() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &["--members", "1"]);
    let manifest = dir.path().join("manifest.json");
    for m in ["c", "d"] {
        let out = dir.path().join(m);
        assert_eq!(run(&["pipeline", s(&manifest), "--method", m, "--out", s(&out)]), EXIT_OK);
    }
    let c = std::fs::read(dir.path().join("c/predictions.csv")).unwrap();
    let d = std::fs::read(dir.path().join("d/predictions.csv")).unwrap();
    assert_eq!(c, d);
}

#[test]
fn trimmed_zero_equals_average() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = dir.path().join("manifest.json");
    let t = dir.path().join("t");
    let a = dir.path().join("a");
    assert_eq!(
        run(&["pipeline", s(&manifest), "--rule", "trimmed", "--trim-frac", "0", "--out", s(&t)]),
        EXIT_OK
    );
    assert_eq!(run(&["pipeline", s(&manifest), "--rule", "avg", "--out", s(&a)]), EXIT_OK);
    assert_eq!(
        std::fs::read(t.join("predictions.csv")).unwrap(),
        std::fs::read(a.join("predictions.csv")).unwrap()
    );
}

fn test_only_manifest(dir: &Path) -> PathBuf {
    let full = io::read_manifest(&dir.join("manifest.json")).unwrap();
    let m = Manifest {
        members: full.members.into_iter().filter(|e| e.role == Role::Test).collect(),
        ..Manifest::default()
    };
    let path = dir.join("test_only.json");
    io::write_manifest(&path, &m).unwrap();
    path
}

#[test]
fn missing_validation_is_explicit() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = test_only_manifest(dir.path());
    assert_eq!(run(&["pipeline", s(&manifest), "--method", "a"]), EXIT_OK);
    for m in ["b", "c", "d"] {
        assert_eq!(run(&["pipeline", s(&manifest), "--method", m]), EXIT_DATA);
    }
    let args = poolcal_cli::PipelineArgs {
        manifest: manifest.clone(),
        method: "b".into(),
        calibration: poolcal_cli::CalibrationArgs {
            rule: "avg".into(),
            trim_frac: 0.1,
            grid: "100,0.01,10".into(),
            bins: 15,
            score: "nll".into(),
        },
        out: None,
    };
    let err = poolcal_cli::commands::pipeline(&args).unwrap_err().to_string();
    assert!(err.contains("validation") && err.contains("\"val\""), "{err}");
}

#[test]
fn pipeline_report_matches_library() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = dir.path().join("manifest.json");
    let out = dir.path().join("b");
    assert_eq!(run(&["pipeline", s(&manifest), "--method", "b", "--score", "brier", "--out", s(&out)]), EXIT_OK);
    let r = report(&out.join("report.json"));
    assert_eq!(r.methods[0].temperatures.len(), 3);
    assert_eq!(r.methods[0].fits[0].grid.len(), 100);
    let loaded = io::load_manifest(&manifest).unwrap();
    let cfg = poolcal::PipelineConfig {
        method: poolcal::Method::B,
        scoring: poolcal::ScoringRule::Brier,
        ..Default::default()
    };
    let lib = poolcal::pipelines::run(loaded.val.as_ref(), loaded.test.as_ref().unwrap(), &cfg).unwrap();
    assert!((r.methods[0].metrics.ece - lib.metrics.ece).abs() <= 1e-6 * lib.metrics.ece);
    let written = io::read_predictions(&out.join("predictions.csv")).unwrap();
    for (a, b) in written.probs().iter().zip(lib.test_predictions.probs()) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
    }
}

#[test]
fn sweep_single_repeat_has_zero_std() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = dir.path().join("manifest.json");
    let out = dir.path().join("sweep.csv");
    assert_eq!(run(&["sweep", "--manifest", s(&manifest), "--sizes", "1,3", "--out", s(&out)]), EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 4 * 5);
    assert!(rows.iter().all(|r| r[4] == "0"));
    // one member: b, c and d coincide
    for metric in ["ece", "nll", "brier"] {
        let v: Vec<&str> = rows.iter().filter(|r| r[1] == "1" && r[2] == metric && r[0] != "a").map(|r| r[3]).collect();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| *x == v[0]), "{metric}: {v:?}");
    }
    assert_eq!(run(&["sweep", "--manifest", s(&manifest), "--sizes", "4"]), EXIT_USAGE);
    assert_eq!(run(&["sweep", "--sizes", "1"]), EXIT_USAGE);
}

#[test]
fn sweep_repeats_spread() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = dir.path().join("manifest.json");
    let args = poolcal_cli::parse_args([
        "poolcal", "sweep", "--manifest", s(&manifest), "--sizes", "3", "--methods", "d", "--repeats", "4",
    ])
    .unwrap();
    let text = poolcal_cli::execute(&args).unwrap();
    let ece: Vec<&str> = text.lines().find(|l| l.starts_with("d,3,ece,")).unwrap().split(',').collect();
    assert!(ece[4].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn ood_fixtures() {
    let dir = TempDir::new().unwrap();
    let mut one_hot = String::from("sample_id,label");
    for c in 0..10 {
        one_hot += &format!(",p_{c}");
    }
    let header = one_hot.clone();
    one_hot.push('\n');
    let mut uniform = format!("{header}\n");
    for i in 0..10 {
        let row: Vec<String> = (0..10).map(|c| if c == i { "1".into() } else { "0".into() }).collect();
        one_hot += &format!("s{i},{i},{}\n", row.join(","));
        uniform += &format!("s{i},{i},{}\n", ["0.1"; 10].join(","));
    }
    let in_file = write(dir.path(), "in.csv", &one_hot);
    let out_file = write(dir.path(), "out.csv", &uniform);
    let manifest = dir.path().join("m.json");
    io::write_manifest(
        &manifest,
        &Manifest {
            members: vec![ManifestEntry {
                member_id: "m".into(),
                role: Role::Test,
                path: "in.csv".into(),
            }],
            ..Manifest::default()
        },
    )
    .unwrap();
    let rep = dir.path().join("r.json");
    assert_eq!(run(&["ood", s(&manifest), s(&out_file), "--out", s(&rep)]), EXIT_OK);
    let o = report(&rep).ood.unwrap();
    assert_abs_diff_eq!(o.gap_a, 10f64.ln(), epsilon = 1e-5);
    assert!(o.gap_d.is_none());

    assert_eq!(run(&["ood", s(&manifest), s(&in_file), "--out", s(&rep)]), EXIT_OK);
    assert_eq!(report(&rep).ood.unwrap().gap_a, 0.0);

    let narrow = write(dir.path(), "narrow.csv", "sample_id,label,p_0,p_1\na,0,0.5,0.5\n");
    assert_eq!(run(&["ood", s(&manifest), s(&narrow)]), EXIT_DATA);
}

#[test]
fn ood_on_harness_manifest_reports_both_methods() {
    let dir = TempDir::new().unwrap();
    small_sim(dir.path(), &[]);
    let manifest = dir.path().join("manifest.json");
    let rep = dir.path().join("r.json");
    assert_eq!(run(&["ood", s(&manifest), s(&manifest), "--out", s(&rep)]), EXIT_OK);
    let o = report(&rep).ood.unwrap();
    assert_eq!(o.out_samples, 60);
    assert!(o.gap_d.is_some() && o.tau_d.is_some());
}

#[test]
fn distance_round_trip() {
    let dir = TempDir::new().unwrap();
    let preds = write(
        dir.path(),
        "p.csv",
        "sample_id,label,p_0,p_1\na,0,0.9,0.1\nb,1,0.6,0.4\nc,1,0.3,0.7\nd,1,0.5,0.5\n",
    );
    let test = write(dir.path(), "te.csv", "sample_id,e_0,e_1\na,0,0\nb,3,0\nc,1,0\nd,0,5\n");
    let train = write(dir.path(), "tr.csv", "sample_id,e_0,e_1\nt0,0,0\nt1,0,1\n");
    let out = dir.path().join("d.csv");
    assert_eq!(
        run(&[
            "distance", s(&preds), "--test-embeddings", s(&test), "--train-embeddings", s(&train),
            "--quantile-bins", "2", "--out", s(&out),
        ]),
        EXIT_OK
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "0,2,0,1,0.5,0.2,0,0.231018,0.467974");
    assert!(lines[2].starts_with("1,2,3,4,3.5,"));

    let lib = metrics::distance_binned_metrics(
        &io::read_predictions(&preds).unwrap(),
        &io::read_embeddings(&test).unwrap(),
        &io::read_embeddings(&train).unwrap(),
        2,
    )
    .unwrap();
    let nll: f64 = lines[2].split(',').nth(7).unwrap().parse().unwrap();
    assert!((nll - lib[1].nll).abs() < 1e-6);

    let shuffled = write(dir.path(), "bad.csv", "sample_id,e_0,e_1\na,0,0\nc,3,0\nb,1,0\nd,0,5\n");
    let args = poolcal_cli::parse_args([
        "poolcal", "distance", s(&preds), "--test-embeddings", s(&shuffled), "--train-embeddings", s(&train),
    ])
    .unwrap();
    let err = poolcal_cli::execute(&args).unwrap_err().to_string();
    assert!(err.contains("\"b\"") && err.contains("\"c\""), "{err}");
}
