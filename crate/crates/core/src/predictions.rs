//! Labelled prediction matrices and ensembles of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{normalize_row, top_prediction_row, ProbVector, SIMPLEX_TOLERANCE};

/// `N` probability rows over `C` classes plus the true label of each sample.
///
/// Rows are stored row-major in a single buffer. Labels are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPredictions {
    probs: Vec<f64>,
    n_classes: usize,
    labels: Vec<usize>,
    sample_ids: Option<Vec<String>>,
}

impl LabeledPredictions {
    /// Builds a prediction set from a row-major `probs` buffer.
    ///
    /// Every row is checked against the simplex within [`SIMPLEX_TOLERANCE`]
    /// and divided by its sum.
    pub fn new(
        probs: Vec<f64>,
        n_classes: usize,
        labels: Vec<usize>,
        sample_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        Self::with_tolerance(probs, n_classes, labels, sample_ids, SIMPLEX_TOLERANCE)
    }

    pub fn with_tolerance(
        mut probs: Vec<f64>,
        n_classes: usize,
        labels: Vec<usize>,
        sample_ids: Option<Vec<String>>,
        tolerance: f64,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if probs.len() != labels.len() * n_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} probabilities for {} labels x {} classes",
                probs.len(),
                labels.len(),
                n_classes
            )));
        }
        if let Some(ids) = &sample_ids {
            if ids.len() != labels.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} sample ids for {} labels",
                    ids.len(),
                    labels.len()
                )));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {y} of sample {i} out of range for {n_classes} classes"
            )));
        }
        for (i, row) in probs.chunks_exact_mut(n_classes).enumerate() {
            normalize_row(row, tolerance)
                .map_err(|e| Error::InvalidInput(format!("row {i}: {e}")))?;
        }
        Ok(Self {
            probs,
            n_classes,
            labels,
            sample_ids,
        })
    }

    /// Builds a prediction set from individual rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_classes) {
            return Err(Error::ShapeMismatch("rows have different widths".into()));
        }
        Self::new(rows.concat(), n_classes, labels, None)
    }

    /// Trusted constructor for buffers produced by this crate's own operations.
    pub(crate) fn from_parts_unchecked(
        probs: Vec<f64>,
        n_classes: usize,
        labels: Vec<usize>,
        sample_ids: Option<Vec<String>>,
    ) -> Self {
        debug_assert_eq!(probs.len(), labels.len() * n_classes);
        Self {
            probs,
            n_classes,
            labels,
            sample_ids,
        }
    }

    /// Same labels and ids, new probability buffer of identical shape.
    pub(crate) fn with_probs_unchecked(&self, probs: Vec<f64>) -> Self {
        Self::from_parts_unchecked(
            probs,
            self.n_classes,
            self.labels.clone(),
            self.sample_ids.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    /// Row-major probability buffer.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.probs.chunks_exact(self.n_classes)
    }

    pub fn prob_vector(&self, i: usize) -> ProbVector {
        ProbVector::from_vec_unchecked(self.row(i).to_vec())
    }

    /// Predicted class of sample `i`.
    pub fn predicted_class(&self, i: usize) -> usize {
        top_prediction_row(self.row(i)).0
    }

    /// Confidence (largest probability) of sample `i`.
    pub fn confidence(&self, i: usize) -> f64 {
        top_prediction_row(self.row(i)).1
    }

    /// Fraction of samples whose argmax equals the label.
    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = (0..self.len())
            .filter(|&i| self.predicted_class(i) == self.labels[i])
            .count();
        hits as f64 / self.len() as f64
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(indices.len() * self.n_classes);
        for &i in indices {
            probs.extend_from_slice(self.row(i));
        }
        Self::from_parts_unchecked(
            probs,
            self.n_classes,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.sample_ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect()),
        )
    }

    /// Same probabilities with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        if labels.iter().any(|&y| y >= self.n_classes) {
            return Err(Error::InvalidInput("label out of range".into()));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Attaches sample identifiers.
    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sample ids for {} samples",
                ids.len(),
                self.len()
            )));
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }
}

/// `K` prediction sets over one shared, identically ordered sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePredictions {
    members: Vec<LabeledPredictions>,
    member_ids: Vec<String>,
}

impl EnsemblePredictions {
    pub fn new(members: Vec<LabeledPredictions>, member_ids: Vec<String>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble has no members"))?;
        if member_ids.len() != members.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} member ids for {} members",
                member_ids.len(),
                members.len()
            )));
        }
        for (k, m) in members.iter().enumerate().skip(1) {
            if m.len() != first.len() || m.n_classes() != first.n_classes() {
                return Err(Error::ShapeMismatch(format!(
                    "member {} has shape {}x{}, expected {}x{}",
                    member_ids[k],
                    m.len(),
                    m.n_classes(),
                    first.len(),
                    first.n_classes()
                )));
            }
            if m.labels() != first.labels() {
                return Err(Error::ShapeMismatch(format!(
                    "member {} has different labels",
                    member_ids[k]
                )));
            }
            if let (Some(a), Some(b)) = (m.sample_ids(), first.sample_ids()) {
                if a != b {
                    return Err(Error::ShapeMismatch(format!(
                        "member {} has a different sample order",
                        member_ids[k]
                    )));
                }
            }
        }
        Ok(Self {
            members,
            member_ids,
        })
    }

    /// Members named `m0, m1, ...`.
    pub fn from_members(members: Vec<LabeledPredictions>) -> Result<Self> {
        let ids = (0..members.len()).map(|k| format!("m{k}")).collect();
        Self::new(members, ids)
    }

    pub fn members(&self) -> &[LabeledPredictions] {
        &self.members
    }

    pub fn member_ids(&self) -> &[String] {
        &self.member_ids
    }

    /// Number of members `K`.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn n_samples(&self) -> usize {
        self.members[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    pub fn labels(&self) -> &[usize] {
        self.members[0].labels()
    }

    /// The first `m` members, in stored order.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.size() {
            return Err(Error::InvalidParameter(format!(
                "ensemble size {m} outside 1..={}",
                self.size()
            )));
        }
        Ok(Self {
            members: self.members[..m].to_vec(),
            member_ids: self.member_ids[..m].to_vec(),
        })
    }

    /// Applies `f` to every member, keeping ids.
    pub fn map_members<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&LabeledPredictions) -> Result<LabeledPredictions>,
    {
        let members = self.members.iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(members, self.member_ids.clone())
    }

    /// Same samples (rows at `indices`) in every member.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            members: self.members.iter().map(|m| m.select(indices)).collect(),
            member_ids: self.member_ids.clone(),
        }
    }

    /// Replaces the labels of every member.
    pub fn with_labels(&self, labels: &[usize]) -> Result<Self> {
        self.map_members(|m| m.with_labels(labels.to_vec()))
    }
}

/// Non-negative ensemble weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingWeights(Vec<f64>);

impl PoolingWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("pooling weights"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "pooling weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "pooling weights sum to {sum}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("pooling weights"));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
