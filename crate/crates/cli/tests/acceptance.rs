//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use poolcal::calibration::{fit_temperature, scale, scale_all, GridSpec, ScoringRule};
use poolcal::metrics::{self, BinningSpec};
use poolcal::pipelines::{self, Method, PipelineConfig, PipelineResult};
use poolcal::pooling::{pool, PoolingRule};
use poolcal::synth::{build_ensemble, HarnessConfig, HarnessData, MixupConfig, TinyClassifier};
use poolcal::{EnsemblePredictions, LabeledPredictions, PoolingWeights, ProbVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DC_IDENTITY_TOL: f64 = 1e-10;
const DC_RUNTIME: Duration = Duration::from_secs(5);
const SCALE_FORMS_TOL: f64 = 1e-12;
const ENTROPY_MONOTONE_SLACK: f64 = 1e-12;
const SCALE_RUNTIME: Duration = Duration::from_secs(1);
const ECE_ORACLE_TOL: f64 = 1e-12;
const CONCAVITY_SLACK: f64 = 1e-12;
const HARNESS_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MIN_SEEDS: usize = 4;
const HARNESS_RUNTIME: Duration = Duration::from_secs(120);
const MAX_MEDIAN_ECE_RATIO: f64 = 0.75;
const CD_ABS_TOL: f64 = 0.01;
const CD_REL_TOL: f64 = 0.25;
const MIXUP_ALPHAS: [f64; 3] = [0.0, 0.2, 1.0];
const MIXUP_MAX_INVERSIONS: usize = 1;
const GRAD_POINTS: usize = 20;
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_preds(rng: &mut ChaCha8Rng, n: usize, c: usize, sharp: f64) -> LabeledPredictions {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..c).map(|_| sharp * rng.random_range(-1.0..1.0)).collect();
            poolcal::softmax(&logits).unwrap().into_vec()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    LabeledPredictions::from_rows(&rows, labels).unwrap()
}

fn random_ensemble(rng: &mut ChaCha8Rng, k: usize, n: usize, c: usize) -> EnsemblePredictions {
    let first = random_preds(rng, n, c, 4.0);
    let labels = first.labels().to_vec();
    let mut members = vec![first];
    for _ in 1..k {
        members.push(random_preds(rng, n, c, 4.0).with_labels(labels.clone()).unwrap());
    }
    EnsemblePredictions::from_members(members).unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> PoolingWeights {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    PoolingWeights::new(raw.iter().map(|x| x / s).collect()).unwrap()
}

fn dc_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let e = random_ensemble(&mut rng, k, 500, 2);
        let w = random_weights(&mut rng, k);
        let d = metrics::dc_decomposition(&e, &w).unwrap();
        let direct = metrics::dc_score(&pool(&e, &PoolingRule::weighted(w)).unwrap()).unwrap();
        worst = worst.max(d.residual().abs()).max((direct - d.pooled_dc).abs());
    }
    let t = start.elapsed();
    check(
        worst < DC_IDENTITY_TOL && t < DC_RUNTIME,
        format!("max residual {worst:.2e} (< {DC_IDENTITY_TOL:e}), {t:.2?} (< {DC_RUNTIME:?})"),
    )
}

fn entropy_row(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn scale_forms_and_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut violations = 0;
    let monotone_grid: Vec<f64> = GridSpec::new(1.0, 10.0, 50).unwrap().temperatures();
    for _ in 0..1000 {
        let c = rng.random_range(2..=10);
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.001..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p = ProbVector::new(raw.iter().map(|x| x / s).collect()).unwrap();
        let tau = (rng.random_range(0.01f64.ln()..10f64.ln())).exp();
        let softmax_form = scale(&p, tau).unwrap();
        let pow: Vec<f64> = p.as_slice().iter().map(|x| x.powf(1.0 / tau)).collect();
        let z: f64 = pow.iter().sum();
        for (a, b) in softmax_form.as_slice().iter().zip(&pow) {
            worst = worst.max((a - b / z).abs());
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &monotone_grid {
            let h = entropy_row(scale(&p, t).unwrap().as_slice());
            if h < prev - ENTROPY_MONOTONE_SLACK {
                violations += 1;
            }
            prev = h;
        }
    }
    let t = start.elapsed();
    check(
        worst < SCALE_FORMS_TOL && violations == 0 && t < SCALE_RUNTIME,
        format!(
            "max form gap {worst:.2e} (< {SCALE_FORMS_TOL:e}), {violations} entropy decreases on [1, 10], {t:.2?} (< {SCALE_RUNTIME:?})"
        ),
    )
}

fn brute_force_ece(p: &LabeledPredictions, m: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..m {
        let (lo, hi) = (b as f64 / m as f64, (b + 1) as f64 / m as f64);
        let (mut count, mut acc, mut conf) = (0usize, 0.0, 0.0);
        for i in 0..p.len() {
            let row = p.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let inside = if b == 0 { row[best] <= hi } else { row[best] > lo && row[best] <= hi };
            if inside {
                count += 1;
                conf += row[best];
                if best == p.labels()[i] {
                    acc += 1.0;
                }
            }
        }
        if count > 0 {
            total += (acc - conf).abs() / p.len() as f64;
        }
    }
    total
}

fn ece_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let m = [5, 10, 15][case % 3];
        let c = rng.random_range(2..=8);
        let n = rng.random_range(50..400);
        let sharp = rng.random_range(0.5..8.0);
        let p = random_preds(&mut rng, n, c, sharp);
        let got = metrics::ece(&p, &BinningSpec::equal_width(m).unwrap()).unwrap();
        worst = worst.max((got - brute_force_ece(&p, m)).abs());
    }
    let fixture = LabeledPredictions::from_rows(&[vec![0.6, 0.4], vec![0.8, 0.2]], vec![0, 1]).unwrap();
    let hand = metrics::ece(&fixture, &BinningSpec::new(vec![0.0, 0.5, 1.0]).unwrap()).unwrap();
    check(
        worst < ECE_ORACLE_TOL && (hand - 0.2).abs() < ECE_ORACLE_TOL,
        format!("max gap to brute force {worst:.2e} (< {ECE_ORACLE_TOL:e}), hand fixture {:.1}%", 100.0 * hand),
    )
}

fn entropy_of_average() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let k = rng.random_range(2..=10);
        let c = rng.random_range(2..=6);
        let e = random_ensemble(&mut rng, k, 100, c);
        let w = random_weights(&mut rng, k);
        let pooled = pool(&e, &PoolingRule::weighted(w.clone())).unwrap();
        let members: f64 = e
            .members()
            .iter()
            .zip(w.as_slice())
            .map(|(m, wi)| wi * metrics::mean_entropy(m).unwrap())
            .sum();
        worst = worst.min(metrics::mean_entropy(&pooled).unwrap() - members);
    }
    check(
        worst >= -CONCAVITY_SLACK,
        format!("min H(pool) - weighted mean H(members) = {worst:.3e} (>= -{CONCAVITY_SLACK:e})"),
    )
}

struct HarnessRun {
    data: HarnessData,
    results: BTreeMap<Method, PipelineResult>,
}

fn harness_runs() -> (Vec<HarnessRun>, Duration) {
    let start = Instant::now();
    let runs = HARNESS_SEEDS
        .iter()
        .map(|&seed| {
            let cfg = HarnessConfig { seed, ..HarnessConfig::default() };
            let data = build_ensemble(&cfg, &cfg.member_seeds()).unwrap();
            let pc = PipelineConfig::default();
            let results = Method::ALL
                .iter()
                .map(|&m| (m, pipelines::run(Some(&data.val), &data.test, &pc.with_method(m)).unwrap()))
                .collect();
            HarnessRun { data, results }
        })
        .collect();
    (runs, start.elapsed())
}

fn under_confidence(runs: &[HarnessRun], elapsed: Duration) -> Outcome {
    let bins = BinningSpec::default();
    let mut hits = 0;
    let mut cells = Vec::new();
    for run in runs {
        let b = &run.results[&Method::B];
        let gap = b.reliability.mean_gap();
        let scaled_members: f64 = run
            .data
            .val
            .members()
            .iter()
            .zip(run.data.test.members())
            .map(|(v, t)| {
                let tau = fit_temperature(v, &GridSpec::default(), ScoringRule::Nll).unwrap().tau_star;
                metrics::ece(&scale_all(t, tau).unwrap(), &bins).unwrap()
            })
            .sum::<f64>()
            / run.data.test.size() as f64;
        if gap > 0.0 && b.metrics.ece > scaled_members {
            hits += 1;
        }
        cells.push(format!("gap {gap:+.3}/ECE {:.3} vs {scaled_members:.3}", b.metrics.ece));
    }
    check(
        hits >= MIN_SEEDS && elapsed < HARNESS_RUNTIME,
        format!("{hits}/5 seeds [{}], harness {elapsed:.1?} (< {HARNESS_RUNTIME:?})", cells.join("; ")),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pool_then_calibrate(runs: &[HarnessRun]) -> Outcome {
    let mut wins = 0;
    let mut ratios = Vec::new();
    let mut same_acc = true;
    for run in runs {
        let (a, d) = (&run.results[&Method::A], &run.results[&Method::D]);
        if d.metrics.ece < a.metrics.ece {
            wins += 1;
        }
        ratios.push(d.metrics.ece / a.metrics.ece);
        same_acc &= a.metrics.accuracy == d.metrics.accuracy;
    }
    let med = median(ratios.clone());
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    check(
        wins >= MIN_SEEDS && med <= MAX_MEDIAN_ECE_RATIO && same_acc,
        format!(
            "ECE(d) < ECE(a) in {wins}/5, ratios [{}], median {med:.3} (<= {MAX_MEDIAN_ECE_RATIO}), equal accuracy: {same_acc}",
            shown.join(", ")
        ),
    )
}

fn c_and_d_comparable(runs: &[HarnessRun]) -> Outcome {
    // harness defaults are seed 0
    let r = &runs[0].results;
    let (c, d) = (r[&Method::C].metrics.ece, r[&Method::D].metrics.ece);
    let bound = CD_ABS_TOL.max(CD_REL_TOL * d);
    let close = (c - d).abs() <= bound;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let val = random_ensemble(&mut rng, 1, 80, 4);
    let test = random_ensemble(&mut rng, 1, 200, 4);
    let pc = PipelineConfig::default();
    let out: Vec<LabeledPredictions> = [Method::B, Method::C, Method::D]
        .iter()
        .map(|&m| pipelines::run(Some(&val), &test, &pc.with_method(m)).unwrap().test_predictions)
        .collect();
    let bits = |p: &LabeledPredictions| p.probs().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical = bits(&out[0]) == bits(&out[1]) && bits(&out[1]) == bits(&out[2]);
    check(
        close && identical,
        format!("|ECE(c) - ECE(d)| = {:.4} (<= {bound:.4}), K = 1 b/c/d bit-identical: {identical}", (c - d).abs()),
    )
}

fn mean_confidence_and_entropy(e: &EnsemblePredictions) -> (f64, f64) {
    let k = e.size() as f64;
    let mut conf = 0.0;
    let mut ent = 0.0;
    for m in e.members() {
        conf += (0..m.len()).map(|i| m.confidence(i)).sum::<f64>() / m.len() as f64 / k;
        ent += metrics::mean_entropy(m).unwrap() / k;
    }
    (conf, ent)
}

fn mixup_trend() -> Outcome {
    let mut inversions = 0;
    let mut cells = Vec::new();
    for &seed in &HARNESS_SEEDS {
        let stats: Vec<(f64, f64)> = MIXUP_ALPHAS
            .iter()
            .map(|&alpha| {
                let cfg = HarnessConfig {
                    seed,
                    ood_n: 0,
                    mixup: MixupConfig::new(alpha).unwrap(),
                    ..HarnessConfig::default()
                };
                let data = build_ensemble(&cfg, &cfg.member_seeds()).unwrap();
                mean_confidence_and_entropy(&data.test)
            })
            .collect();
        for w in stats.windows(2) {
            inversions += usize::from(w[1].0 > w[0].0) + usize::from(w[1].1 < w[0].1);
        }
        let confs: Vec<String> = stats.iter().map(|s| format!("{:.3}", s.0)).collect();
        cells.push(confs.join(">"));
    }
    check(
        inversions <= MIXUP_MAX_INVERSIONS,
        format!("{inversions} inversions (<= {MIXUP_MAX_INVERSIONS}); mean confidence per seed [{}]", cells.join(", ")),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for point in 0..GRAD_POINTS {
        let (d, h, c, n) = (4, 8, 3, 10);
        let mut net = TinyClassifier::init(d, h, c, 0.7, 100 + point as u64).unwrap();
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut y = vec![0.0; n * c];
        for row in y.chunks_exact_mut(c) {
            let lam: f64 = rng.random();
            row[rng.random_range(0..c)] += lam;
            row[rng.random_range(0..c)] += 1.0 - lam;
        }
        let (_, grad) = net.loss_and_gradient(&x, &y);
        let mut diff = 0.0;
        let mut norm = 0.0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..grad.len() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + FD_STEP;
            let up = net.loss_and_gradient(&x, &y).0;
            net.params_mut()[i] = orig - FD_STEP;
            let down = net.loss_and_gradient(&x, &y).0;
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            diff += (grad[i] - fd).powi(2);
            norm += grad[i] * grad[i];
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-300));
    }
    check(
        worst < GRAD_REL_TOL,
        format!("max relative error {worst:.2e} over {GRAD_POINTS} points (< {GRAD_REL_TOL:e})"),
    )
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for rep in 0..2 {
        let dir = root.path().join(format!("run{rep}"));
        let sim = dir.join("sim");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        let code = poolcal_cli::run(["poolcal", "simulate", "--seed", "11", "--out-dir", &s(&sim)]);
        assert_eq!(code, 0, "simulate failed");
        for m in ["a", "b", "c", "d"] {
            let out = dir.join(format!("pipeline_{m}"));
            let code = poolcal_cli::run([
                "poolcal",
                "pipeline",
                &s(&sim.join("manifest.json")),
                "--method",
                m,
                "--out",
                &s(&out),
            ]);
            assert_eq!(code, 0, "pipeline {m} failed");
        }
        trees.push(files_under(&dir));
    }
    let same = trees[0] == trees[1];
    check(same, format!("{} files compared, byte-identical: {same}", trees[0].len()))
}

fn ood_gap(runs: &[HarnessRun]) -> Outcome {
    let mut hits = 0;
    let mut cells = Vec::new();
    for run in runs {
        let ood = run.data.ood.as_ref().unwrap();
        let pc = PipelineConfig::default();
        let ood_a = pool(ood, &pc.rule).unwrap();
        let d = &run.results[&Method::D];
        let ood_d = scale_all(&ood_a, d.fitted_temperatures[0]).unwrap();
        let gap_a = metrics::entropy_median_gap(&run.results[&Method::A].test_predictions, &ood_a).unwrap();
        let gap_d = metrics::entropy_median_gap(&d.test_predictions, &ood_d).unwrap();
        if gap_d > gap_a {
            hits += 1;
        }
        cells.push(format!("{gap_d:.3} vs {gap_a:.3}"));
    }
    check(hits >= MIN_SEEDS, format!("gap(d) > gap(a) in {hits}/5 seeds [{}]", cells.join(", ")))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {id:>2}. {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {id:>2}. {name}: {detail}");
            }
        }
    };

    report(1, "DC decomposition identity", &mut dc_identity);
    report(2, "temperature scaling forms and entropy monotonicity", &mut scale_forms_and_monotonicity);
    report(3, "ECE oracle equivalence", &mut ece_oracle);
    report(4, "entropy of the average pool", &mut entropy_of_average);

    let (runs, elapsed) = harness_runs();
    report(5, "calibrate-then-pool under-confidence", &mut || under_confidence(&runs, elapsed));
    report(6, "pool-then-calibrate beats raw pooling", &mut || pool_then_calibrate(&runs));
    report(7, "methods c and d comparable", &mut || c_and_d_comparable(&runs));
    report(8, "mixup lowers confidence", &mut mixup_trend);
    report(9, "trainer gradient check", &mut gradient_check);
    report(10, "simulate + pipeline determinism", &mut determinism);
    report(11, "OOD entropy gap sign", &mut || ood_gap(&runs));

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
