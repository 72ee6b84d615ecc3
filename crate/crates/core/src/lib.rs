//! Calibration and evaluation of ensembles of probabilistic classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`prob`] and [`predictions`]: simplex-valued rows, labelled prediction
//!   sets and aligned ensembles of them;
//! - [`metrics`]: ECE and reliability tables, NLL, Brier, entropy, the
//!   deviation-from-calibration score and distance-binned diagnostics;
//! - [`calibration`]: temperature scaling and grid-search fitting;
//! - [`pooling`]: average, median and trimmed aggregation;
//! - [`pipelines`]: the four pooling/calibration orderings and the sweeps
//!   built on them;
//! - [`synth`]: a synthetic task with a known posterior and a small trainer
//!   that produces ensembles to experiment with.

/// Parallel iterator with the `parallel` feature, sequential without it.
#[cfg(feature = "parallel")]
macro_rules! maybe_par_iter {
    ($e:expr) => {
        rayon::iter::IntoParallelIterator::into_par_iter($e)
    };
}

#[cfg(not(feature = "parallel"))]
macro_rules! maybe_par_iter {
    ($e:expr) => {
        IntoIterator::into_iter($e)
    };
}

pub mod calibration;
pub mod error;
pub mod metrics;
pub mod pipelines;
pub mod pooling;
pub mod predictions;
pub mod prob;
pub mod synth;

pub use calibration::{fit_temperature, scale, scale_all, GridSpec, ScoringRule, TemperatureFit};
pub use error::{Error, Result};
pub use metrics::{BinningSpec, EmbeddingTable, ReliabilityReport};
pub use pipelines::{Method, MetricReport, PipelineConfig, PipelineResult};
pub use pooling::{pool, PoolingRule};
pub use predictions::{EnsemblePredictions, LabeledPredictions, PoolingWeights};
pub use prob::{entropy, softmax, top_prediction, ProbVector};
