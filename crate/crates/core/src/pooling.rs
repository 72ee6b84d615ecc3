//! Aggregation of ensemble predictions into a single prediction set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::median;
use crate::predictions::{EnsemblePredictions, LabeledPredictions, PoolingWeights};

/// Trim fraction used by [`PoolingRule::trimmed_default`].
pub const DEFAULT_TRIM_FRACTION: f64 = 0.1;

/// How member rows are combined per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PoolingRule {
    /// Arithmetic mean, uniform unless `weights` are given.
    Average { weights: Option<PoolingWeights> },
    /// Componentwise median, renormalized.
    Median,
    /// Drops the `ceil(fraction * K)` member rows farthest (L2) from the
    /// member-mean row, then averages the rest.
    Trimmed { fraction: f64 },
}

impl Default for PoolingRule {
    fn default() -> Self {
        PoolingRule::Average { weights: None }
    }
}

impl PoolingRule {
    pub fn average() -> Self {
        Self::default()
    }

    pub fn weighted(weights: PoolingWeights) -> Self {
        PoolingRule::Average {
            weights: Some(weights),
        }
    }

    pub fn trimmed(fraction: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&fraction) {
            return Err(Error::InvalidParameter(format!(
                "trim fraction must lie in [0, 0.5), got {fraction}"
            )));
        }
        Ok(PoolingRule::Trimmed { fraction })
    }

    pub fn trimmed_default() -> Self {
        PoolingRule::Trimmed {
            fraction: DEFAULT_TRIM_FRACTION,
        }
    }

    /// Short name used in reports: `avg`, `median` or `trimmed`.
    pub fn name(&self) -> &'static str {
        match self {
            PoolingRule::Average { .. } => "avg",
            PoolingRule::Median => "median",
            PoolingRule::Trimmed { .. } => "trimmed",
        }
    }
}

impl fmt::Display for PoolingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingRule::Trimmed { fraction } => write!(f, "trimmed({fraction})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for PoolingRule {
    type Err = Error;

    /// Parses `avg`, `median`, `trimmed` (default fraction) or `trimmed:<f>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "avg" | "average" => Ok(Self::average()),
            "median" => Ok(PoolingRule::Median),
            "trimmed" | "trim" => Ok(Self::trimmed_default()),
            _ => match s.strip_prefix("trimmed:") {
                Some(f) => Self::trimmed(f.parse().map_err(|_| {
                    Error::InvalidParameter(format!("bad trim fraction {f:?}"))
                })?),
                None => Err(Error::InvalidParameter(format!("unknown pooling rule {s:?}"))),
            },
        }
    }
}

/// Number of member rows dropped by trimmed pooling.
pub fn trim_count(fraction: f64, k: usize) -> usize {
    // the small offset keeps e.g. 0.3 * 10 = 3.0000000000000004 at 3
    ((fraction * k as f64) - 1e-9).ceil().max(0.0) as usize
}

fn weighted_mean_into(rows: &[&[f64]], weights: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (row, &w) in rows.iter().zip(weights) {
        for (o, &p) in out.iter_mut().zip(row.iter()) {
            *o += w * p;
        }
    }
}

fn median_into(rows: &[&[f64]], out: &mut [f64]) -> bool {
    let mut column = Vec::with_capacity(rows.len());
    for (c, o) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(rows.iter().map(|r| r[c]));
        *o = median(&column).unwrap_or(0.0);
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|o| *o /= sum);
        true
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|o| *o = u);
        false
    }
}

fn trimmed_into(rows: &[&[f64]], drop: usize, out: &mut [f64]) {
    let k = rows.len();
    let uniform = vec![1.0 / k as f64; k];
    if drop == 0 {
        weighted_mean_into(rows, &uniform, out);
        return;
    }
    let mut centre = vec![0.0; out.len()];
    weighted_mean_into(rows, &uniform, &mut centre);
    let mut by_distance: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d2: f64 = r.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    // farthest first; equal distances drop the later member
    by_distance.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut keep: Vec<usize> = by_distance[drop..].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    let kept: Vec<&[f64]> = keep.iter().map(|&i| rows[i]).collect();
    let w = vec![1.0 / kept.len() as f64; kept.len()];
    weighted_mean_into(&kept, &w, out);
}

/// Pools the members of `ensemble` sample by sample.
///
/// A single-member ensemble is returned unchanged for every rule except a
/// trimmed rule that would drop it.
pub fn pool(ensemble: &EnsemblePredictions, rule: &PoolingRule) -> Result<LabeledPredictions> {
    let k = ensemble.size();
    let c = ensemble.n_classes();
    let n = ensemble.n_samples();

    let weights = match rule {
        PoolingRule::Average { weights: Some(w) } => {
            if w.len() != k {
                return Err(Error::ShapeMismatch(format!("{} weights for {k} members", w.len())));
            }
            w.as_slice().to_vec()
        }
        _ => vec![1.0 / k as f64; k],
    };
    let drop = match rule {
        PoolingRule::Trimmed { fraction } => {
            if !(0.0..0.5).contains(fraction) {
                return Err(Error::InvalidParameter(format!(
                    "trim fraction must lie in [0, 0.5), got {fraction}"
                )));
            }
            let d = trim_count(*fraction, k);
            if d >= k {
                return Err(Error::InvalidParameter(format!(
                    "trimming {d} of {k} members leaves none"
                )));
            }
            d
        }
        _ => 0,
    };

    let first = &ensemble.members()[0];
    if k == 1 {
        return Ok(first.clone());
    }

    let mut out = vec![0.0; n * c];
    let mut degenerate = 0usize;
    let mut rows: Vec<&[f64]> = Vec::with_capacity(k);
    for (s, dst) in out.chunks_exact_mut(c).enumerate() {
        rows.clear();
        rows.extend(ensemble.members().iter().map(|m| m.row(s)));
        match rule {
            PoolingRule::Average { .. } => weighted_mean_into(&rows, &weights, dst),
            PoolingRule::Median => {
                if !median_into(&rows, dst) {
                    degenerate += 1;
                }
            }
            PoolingRule::Trimmed { .. } => trimmed_into(&rows, drop, dst),
        }
    }
    if degenerate > 0 {
        log::warn!("median pooling: {degenerate} rows had all-zero medians, replaced by uniform");
    }
    Ok(LabeledPredictions::from_parts_unchecked(
        out,
        c,
        first.labels().to_vec(),
        first.sample_ids().map(<[String]>::to_vec),
    ))
}
