//! Command-line front end: every command parses its inputs, calls the
//! corresponding `poolcal` routine and serializes the result.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use poolcal::calibration::{GridSpec, ScoringRule};
use poolcal::metrics::BinningSpec;
use poolcal::pipelines::{Method, PipelineConfig};
use poolcal::pooling::PoolingRule;
use poolcal::synth::{HarnessConfig, Hyperparams, MixupConfig};

pub mod commands;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "poolcal", version, args_override_self = true, about = "Calibrate and evaluate ensembles of probabilistic classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Metrics and reliability table of one prediction file.
    Metrics(MetricsArgs),
    /// Pool and calibrate an ensemble with one of the methods a-d.
    Pipeline(PipelineArgs),
    /// Train a synthetic ensemble and write its prediction files.
    Simulate(SimulateArgs),
    /// Metrics across ensemble sizes or mixup strengths.
    Sweep(SweepArgs),
    /// Entropy gap between in-distribution and shifted predictions.
    Ood(OodArgs),
    /// Metrics binned by distance to the training set.
    Distance(DistanceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Prediction CSV (sample_id,label,p_0,...).
    pub pred_file: PathBuf,
    #[arg(long, default_value_t = poolcal::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Directory for report.json and reliability.csv; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pooling and temperature-fitting options shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct CalibrationArgs {
    /// Pooling rule: avg, median or trimmed.
    #[arg(long, default_value = "avg")]
    pub rule: String,
    /// Fraction of members dropped by the trimmed rule.
    #[arg(long, default_value_t = poolcal::pooling::DEFAULT_TRIM_FRACTION)]
    pub trim_frac: f64,
    /// Temperature grid as count,min,max.
    #[arg(long, default_value = "100,0.01,10")]
    pub grid: String,
    #[arg(long, default_value_t = poolcal::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Score minimized by the temperature fit: nll or brier.
    #[arg(long, default_value = "nll")]
    pub score: String,
}

impl CalibrationArgs {
    pub fn rule(&self) -> CliResult<PoolingRule> {
        match self.rule.to_ascii_lowercase().as_str() {
            "trimmed" | "trim" => Ok(PoolingRule::trimmed(self.trim_frac)?),
            other => Ok(other.parse()?),
        }
    }

    pub fn grid(&self) -> CliResult<GridSpec> {
        let parts: Vec<&str> = self.grid.split(',').map(str::trim).collect();
        let bad = || CliError::Usage(format!("--grid expects count,min,max, got {:?}", self.grid));
        if parts.len() != 3 {
            return Err(bad());
        }
        let count = parts[0].parse().map_err(|_| bad())?;
        let lo = parts[1].parse().map_err(|_| bad())?;
        let hi = parts[2].parse().map_err(|_| bad())?;
        Ok(GridSpec::new(lo, hi, count)?)
    }

    pub fn config(&self, method: Method) -> CliResult<PipelineConfig> {
        Ok(PipelineConfig {
            method,
            rule: self.rule()?,
            grid: self.grid()?,
            scoring: self.score.parse::<ScoringRule>()?,
            binning: BinningSpec::equal_width(self.bins)?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Ensemble manifest (JSON).
    pub manifest: PathBuf,
    /// a: pool only; b: calibrate then pool; c: shared temperature; d: pool then calibrate.
    #[arg(long, default_value = "d")]
    pub method: String,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Directory for report.json, reliability.csv and predictions.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Synthetic task and training options. Defaults match [`HarnessConfig::default`].
#[derive(Debug, Clone, Args)]
pub struct HarnessArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    /// Dimensions carrying class signal; defaults to --dim.
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 950)]
    pub train_n: usize,
    #[arg(long, default_value_t = 50)]
    pub val_n: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub ood_n: usize,
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mixup_alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
}

impl HarnessArgs {
    pub fn config(&self) -> CliResult<HarnessConfig> {
        Ok(HarnessConfig {
            n_classes: self.classes,
            input_dim: self.dim,
            informative_dims: self.informative.unwrap_or(self.dim),
            separation: self.separation,
            sigma: self.sigma,
            train_n: self.train_n,
            val_n: self.val_n,
            test_n: self.test_n,
            ood_n: self.ood_n,
            members: self.members,
            mixup: MixupConfig::new(self.mixup_alpha)?,
            hyper: Hyperparams {
                steps: self.steps,
                hidden: self.hidden,
                learning_rate: self.learning_rate,
                ..Hyperparams::default()
            },
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("axis").required(true).args(["sizes", "mixup_alphas"])))]
pub struct SweepArgs {
    /// Ensemble manifest; required with --sizes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Ensemble sizes (first m members of the manifest).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Mixup strengths; trains one synthetic ensemble per value.
    #[arg(long, value_delimiter = ',')]
    pub mixup_alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "a,b,c,d")]
    pub methods: Vec<String>,
    /// Number of bootstrap resamples of the validation set.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Explicit resampling seeds; overrides --repeats.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[command(flatten)]
    pub harness: HarnessArgs,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OodArgs {
    /// Manifest of in-distribution predictions (test members, val for method d).
    pub in_manifest: PathBuf,
    /// Shifted predictions: a pooled prediction CSV, or a manifest whose ood
    /// (else test) members are pooled.
    pub out_file: PathBuf,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Report JSON path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DistanceArgs {
    pub pred_file: PathBuf,
    #[arg(long)]
    pub test_embeddings: PathBuf,
    #[arg(long)]
    pub train_embeddings: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub quantile_bins: usize,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed command and returns the text meant for stdout.
pub fn execute(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Metrics(a) => commands::metrics(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Ood(a) => commands::ood(a),
        Command::Distance(a) => commands::distance(a),
    }
}

/// Parses `args` (program name first) without exiting on errors.
pub fn parse_args<I, T>(args: I) -> CliResult<Cli>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses `args` (program name first), runs the command, prints its output
/// and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { error::EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            error::EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
