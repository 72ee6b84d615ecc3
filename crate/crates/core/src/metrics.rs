//! Evaluation metrics for probabilistic classifiers.
//!
//! Everything here is a pure function of a [`LabeledPredictions`] (and, for
//! the distance diagnostics, of externally supplied embeddings).
//!
//! - [`reliability`] / [`ece`]: confidence-binned accuracy table and the
//!   expected calibration error derived from it.
//! - [`nll`], [`brier`]: proper scoring rules.
//! - [`mean_entropy`], [`entropy_median_gap`]: confidence surrogates.
//! - [`dc_score`], [`dc_decomposition`]: deviation from calibration for binary
//!   rules and its exact split under linear pooling.
//! - [`distance_binned_metrics`]: metrics as a function of distance to the
//!   training set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictions::{EnsemblePredictions, LabeledPredictions, PoolingWeights};
use crate::prob::{clamped_ln, entropy_row};

/// Number of equal-width confidence bins used when none is specified.
pub const DEFAULT_BINS: usize = 15;

/// Partition `0 = c_0 < c_1 < ... < c_M = 1` of the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    edges: Vec<f64>,
}

impl BinningSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidParameter("need at least one bin".into()));
        }
        if edges[0] != 0.0 || edges[edges.len() - 1] != 1.0 {
            return Err(Error::InvalidParameter(
                "bin edges must start at 0 and end at 1".into(),
            ));
        }
        // negated so NaN edges are rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "bin edges must be strictly increasing".into(),
            ));
        }
        Ok(Self { edges })
    }

    /// `m` bins of width `1/m`.
    pub fn equal_width(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("need at least one bin".into()));
        }
        let mut edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        edges[m] = 1.0;
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// 0-based bin `m` such that `c_m < p <= c_{m+1}`.
    ///
    /// Values at or below zero land in the first bin.
    pub fn bin_of(&self, p: f64) -> usize {
        let idx = self.edges.partition_point(|&c| c < p);
        idx.clamp(1, self.n_bins()) - 1
    }
}

impl Default for BinningSpec {
    fn default() -> Self {
        Self::equal_width(DEFAULT_BINS).expect("default binning is valid")
    }
}

/// One row of a reliability table. Empty bins carry `None` statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub confidence: Option<f64>,
    pub accuracy: Option<f64>,
    /// `accuracy - confidence`; positive means under-confident.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub n: usize,
    pub ece: f64,
}

impl ReliabilityReport {
    /// ECE recomputed from the stored per-bin fields.
    pub fn recompute_ece(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| {
                let gap = b.gap?;
                Some(b.count as f64 / self.n as f64 * gap.abs())
            })
            .sum()
    }

    /// Count-weighted mean of `accuracy - confidence` over all samples.
    pub fn mean_gap(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| Some(b.count as f64 * b.gap?))
            .sum::<f64>()
            / self.n as f64
    }
}

fn require_nonempty(preds: &LabeledPredictions) -> Result<()> {
    if preds.is_empty() {
        Err(Error::Empty("prediction set"))
    } else {
        Ok(())
    }
}

/// Confidence-binned accuracy table.
pub fn reliability(preds: &LabeledPredictions, bins: &BinningSpec) -> Result<ReliabilityReport> {
    require_nonempty(preds)?;
    let m = bins.n_bins();
    let mut count = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    let mut hit_sum = vec![0.0; m];
    for (i, &y) in preds.labels().iter().enumerate() {
        let (yhat, conf) = crate::prob::top_prediction_row(preds.row(i));
        let b = bins.bin_of(conf);
        count[b] += 1;
        conf_sum[b] += conf;
        if yhat == y {
            hit_sum[b] += 1.0;
        }
    }
    let n = preds.len();
    let edges = bins.edges();
    let mut ece = 0.0;
    let bins = (0..m)
        .map(|b| {
            let (confidence, accuracy, gap) = if count[b] == 0 {
                (None, None, None)
            } else {
                let c = conf_sum[b] / count[b] as f64;
                let a = hit_sum[b] / count[b] as f64;
                ece += count[b] as f64 / n as f64 * (a - c).abs();
                (Some(c), Some(a), Some(a - c))
            };
            ReliabilityBin {
                low: edges[b],
                high: edges[b + 1],
                count: count[b],
                confidence,
                accuracy,
                gap,
            }
        })
        .collect();
    Ok(ReliabilityReport { bins, n, ece })
}

/// Expected calibration error as a fraction in `[0, 1]`.
pub fn ece(preds: &LabeledPredictions, bins: &BinningSpec) -> Result<f64> {
    Ok(reliability(preds, bins)?.ece)
}

/// Mean negative log-likelihood of the true labels (nats).
pub fn nll(preds: &LabeledPredictions) -> Result<f64> {
    require_nonempty(preds)?;
    let total: f64 = preds
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| -clamped_ln(preds.row(i)[y]))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Mean squared distance between probability rows and one-hot labels.
pub fn brier(preds: &LabeledPredictions) -> Result<f64> {
    require_nonempty(preds)?;
    let total: f64 = preds
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            preds
                .row(i)
                .iter()
                .enumerate()
                .map(|(c, &p)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Mean row entropy in nats.
pub fn mean_entropy(preds: &LabeledPredictions) -> Result<f64> {
    require_nonempty(preds)?;
    Ok(preds.rows().map(entropy_row).sum::<f64>() / preds.len() as f64)
}

fn positive_class_probs(preds: &LabeledPredictions) -> Result<Vec<f64>> {
    if preds.n_classes() != 2 {
        return Err(Error::UnsupportedShape(format!(
            "deviation from calibration needs 2 classes, got {}",
            preds.n_classes()
        )));
    }
    Ok(preds.rows().map(|r| r[1]).collect())
}

/// Plug-in estimate of `E[(1{Y=1} - p)^2 - p(1 - p)]` for a binary rule,
/// where `p` is the class-1 probability. Zero for calibrated rules, negative
/// for under-confident ones.
pub fn dc_score(preds: &LabeledPredictions) -> Result<f64> {
    require_nonempty(preds)?;
    let p = positive_class_probs(preds)?;
    let total: f64 = p
        .iter()
        .zip(preds.labels())
        .map(|(&p, &y)| {
            let t = if y == 1 { 1.0 } else { 0.0 };
            (t - p) * (t - p) - p * (1.0 - p)
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Terms of the linear-pooling identity
/// `pooled_dc = weighted_individual_dc - diversity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcDecomposition {
    /// DC score of the weighted average rule, computed directly.
    pub pooled_dc: f64,
    /// `Σ_k ω_k DC(p_k)`.
    pub weighted_individual_dc: f64,
    /// `Σ_{i,j} ω_i ω_j E[(p_i - p_j)^2]`, always non-negative.
    pub diversity: f64,
}

impl DcDecomposition {
    /// `pooled_dc + diversity - weighted_individual_dc`; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.pooled_dc + self.diversity - self.weighted_individual_dc
    }
}

pub fn dc_decomposition(
    ensemble: &EnsemblePredictions,
    weights: &PoolingWeights,
) -> Result<DcDecomposition> {
    let k = ensemble.size();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "decomposition needs at least 2 members, got {k}"
        )));
    }
    if weights.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {k} members",
            weights.len()
        )));
    }
    let w = weights.as_slice();
    let p = ensemble
        .members()
        .iter()
        .map(positive_class_probs)
        .collect::<Result<Vec<_>>>()?;
    let n = ensemble.n_samples();

    let mut weighted_individual_dc = 0.0;
    for (member, &wk) in ensemble.members().iter().zip(w) {
        weighted_individual_dc += wk * dc_score(member)?;
    }

    let mut diversity = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j || w[i] == 0.0 || w[j] == 0.0 {
                continue;
            }
            let msd = p[i]
                .iter()
                .zip(&p[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64;
            diversity += w[i] * w[j] * msd;
        }
    }

    let pooled: Vec<f64> = (0..n)
        .map(|s| (0..k).map(|m| w[m] * p[m][s]).sum::<f64>())
        .flat_map(|q| [1.0 - q, q])
        .collect();
    let pooled = LabeledPredictions::from_parts_unchecked(pooled, 2, ensemble.labels().to_vec(), None);
    Ok(DcDecomposition {
        pooled_dc: dc_score(&pooled)?,
        weighted_individual_dc,
        diversity,
    })
}

/// Median with the mean of the two central order statistics for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `median(H(out rows)) - median(H(in rows))`; higher separates better.
pub fn entropy_median_gap(
    in_dist: &LabeledPredictions,
    out_dist: &LabeledPredictions,
) -> Result<f64> {
    if in_dist.n_classes() != out_dist.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "in-distribution set has {} classes, out-of-distribution set {}",
            in_dist.n_classes(),
            out_dist.n_classes()
        )));
    }
    let h_in: Vec<f64> = in_dist.rows().map(entropy_row).collect();
    let h_out: Vec<f64> = out_dist.rows().map(entropy_row).collect();
    let m_in = median(&h_in).ok_or(Error::Empty("in-distribution set"))?;
    let m_out = median(&h_out).ok_or(Error::Empty("out-of-distribution set"))?;
    Ok(m_out - m_in)
}

/// Row-major embedding vectors, optionally keyed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    values: Vec<f64>,
    dim: usize,
    ids: Option<Vec<String>>,
}

impl EmbeddingTable {
    pub fn new(values: Vec<f64>, dim: usize, ids: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form rows of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding entry".into()));
        }
        if let Some(ids) = &ids {
            if ids.len() != values.len() / dim {
                return Err(Error::ShapeMismatch(format!(
                    "{} ids for {} embedding rows",
                    ids.len(),
                    values.len() / dim
                )));
            }
        }
        Ok(Self { values, dim, ids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("embedding rows differ in length".into()));
        }
        Self::new(rows.concat(), dim, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }
}

/// Minimum Euclidean distance from each `query` row to any `reference` row.
pub fn min_distances(query: &EmbeddingTable, reference: &EmbeddingTable) -> Result<Vec<f64>> {
    if query.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions differ: {} vs {}",
            query.dim(),
            reference.dim()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Empty("reference embeddings"));
    }
    Ok(maybe_par_iter!(0..query.len())
        .map(|i| {
            let q = query.row(i);
            (0..reference.len())
                .map(|j| {
                    q.iter()
                        .zip(reference.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Metrics of one equal-count distance bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub count: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub mean_distance: f64,
    /// Mean of `1{correct} - confidence` within the bin.
    pub reliability_gap: f64,
    pub error_rate: f64,
    pub nll: f64,
    pub mean_entropy: f64,
}

/// Splits test samples into `num_bins` equal-count quantile bins of their
/// distance to the training embeddings and reports metrics per bin.
///
/// Bin `b` holds the sorted positions `floor(b N / Q) .. floor((b+1) N / Q)`;
/// ties in distance keep sample order.
pub fn distance_binned_metrics(
    preds: &LabeledPredictions,
    test_emb: &EmbeddingTable,
    train_emb: &EmbeddingTable,
    num_bins: usize,
) -> Result<Vec<DistanceBin>> {
    if num_bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 quantile bins, got {num_bins}"
        )));
    }
    if test_emb.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} test embeddings for {} predictions",
            test_emb.len(),
            preds.len()
        )));
    }
    let n = preds.len();
    if n < num_bins {
        return Err(Error::InvalidInput(format!(
            "{n} samples cannot fill {num_bins} quantile bins"
        )));
    }
    let dist = min_distances(test_emb, train_emb)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));

    Ok((0..num_bins)
        .map(|b| {
            let idx = &order[b * n / num_bins..(b + 1) * n / num_bins];
            let cnt = idx.len() as f64;
            let mut gap = 0.0;
            let mut errors = 0.0;
            let mut nll = 0.0;
            let mut ent = 0.0;
            let mut d = 0.0;
            for &i in idx {
                let row = preds.row(i);
                let (yhat, conf) = crate::prob::top_prediction_row(row);
                let y = preds.labels()[i];
                let hit = if yhat == y { 1.0 } else { 0.0 };
                gap += hit - conf;
                errors += 1.0 - hit;
                nll -= clamped_ln(row[y]);
                ent += entropy_row(row);
                d += dist[i];
            }
            DistanceBin {
                count: idx.len(),
                min_distance: dist[idx[0]],
                max_distance: dist[idx[idx.len() - 1]],
                mean_distance: d / cnt,
                reliability_gap: gap / cnt,
                error_rate: errors / cnt,
                nll: nll / cnt,
                mean_entropy: ent / cnt,
            }
        })
        .collect())
}
