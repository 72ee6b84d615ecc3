use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mixup::{mixup, MixupConfig};
use super::rng_for;
use crate::error::{Error, Result};
use crate::predictions::LabeledPredictions;
use crate::prob::{clamped_ln, softmax_in_place};

const STREAM_INIT: u64 = 10;
const STREAM_TRAIN: u64 = 11;

/// Training hyperparameters of a [`TinyClassifier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub init_std: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 3000,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            init_std: 0.1,
        }
    }
}

/// `input_dim -> hidden (tanh) -> n_classes (softmax)` network.
///
/// Parameters live in one flat buffer: `W1 (hidden x dim)`, `b1`,
/// `W2 (classes x hidden)`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyClassifier {
    input_dim: usize,
    hidden: usize,
    n_classes: usize,
    params: Vec<f64>,
}

impl TinyClassifier {
    /// Gaussian initialisation of the weights with standard deviation
    /// `init_std`; biases start at zero.
    pub fn init(input_dim: usize, hidden: usize, n_classes: usize, init_std: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || n_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "bad network shape {input_dim} -> {hidden} -> {n_classes}"
            )));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::InvalidParameter(format!("init std {init_std}: {e}")))?;
        let mut rng = rng_for(seed, STREAM_INIT);
        let mut net = Self {
            input_dim,
            hidden,
            n_classes,
            params: vec![0.0; hidden * input_dim + hidden + n_classes * hidden + n_classes],
        };
        let (w1, rest) = net.params.split_at_mut(hidden * input_dim);
        let (_, rest) = rest.split_at_mut(hidden);
        let (w2, _) = rest.split_at_mut(n_classes * hidden);
        w1.iter_mut().chain(w2.iter_mut()).for_each(|w| *w = normal.sample(&mut rng));
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (h, d, c) = (self.hidden, self.input_dim, self.n_classes);
        let (w1, rest) = self.params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        (w1, b1, w2, b2)
    }

    /// Hidden activations and class probabilities of one input.
    fn forward_one(&self, x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
        let (w1, b1, w2, b2) = self.split();
        let d = self.input_dim;
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &w1[j * d..(j + 1) * d];
            *h = (b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh();
        }
        for (k, p) in probs.iter_mut().enumerate() {
            let row = &w2[k * self.hidden..(k + 1) * self.hidden];
            *p = b2[k] + row.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum::<f64>();
        }
        softmax_in_place(probs);
    }

    /// Class probabilities for an `n x input_dim` feature buffer.
    pub fn predict(&self, features: &[f64], labels: &[usize]) -> Result<LabeledPredictions> {
        let d = self.input_dim;
        if features.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "{} features for {} samples of dimension {d}",
                features.len(),
                labels.len()
            )));
        }
        let c = self.n_classes;
        let mut probs = vec![0.0; labels.len() * c];
        let mut hidden = vec![0.0; self.hidden];
        for (x, p) in features.chunks_exact(d).zip(probs.chunks_exact_mut(c)) {
            self.forward_one(x, &mut hidden, p);
        }
        LabeledPredictions::new(probs, c, labels.to_vec(), None)
    }

    /// Mean soft-label cross-entropy over a batch and its gradient with
    /// respect to the flat parameter buffer.
    pub fn loss_and_gradient(&self, features: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let (h, d, c) = (self.hidden, self.input_dim, self.n_classes);
        let n = targets.len() / c;
        let (_, _, w2, _) = self.split();
        let mut grad = vec![0.0; self.params.len()];
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);

        let mut hidden = vec![0.0; h];
        let mut probs = vec![0.0; c];
        let mut dz = vec![0.0; c];
        let mut dh = vec![0.0; h];
        let mut loss = 0.0;
        let inv_n = 1.0 / n as f64;
        for (x, y) in features.chunks_exact(d).zip(targets.chunks_exact(c)) {
            self.forward_one(x, &mut hidden, &mut probs);
            for k in 0..c {
                if y[k] > 0.0 {
                    loss -= y[k] * clamped_ln(probs[k]);
                }
                dz[k] = (probs[k] - y[k]) * inv_n;
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                gb2[k] += dz[k];
                let wrow = &w2[k * h..(k + 1) * h];
                let grow = &mut gw2[k * h..(k + 1) * h];
                for j in 0..h {
                    grow[j] += dz[k] * hidden[j];
                    dh[j] += dz[k] * wrow[j];
                }
            }
            for j in 0..h {
                let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                gb1[j] += da;
                let grow = &mut gw1[j * d..(j + 1) * d];
                for (g, &xi) in grow.iter_mut().zip(x) {
                    *g += da * xi;
                }
            }
        }
        (loss * inv_n, grad)
    }
}

/// Trains a classifier on `features` (`n x dim`) and integer `labels` by
/// mini-batch SGD with momentum on the (optionally mixup-augmented)
/// cross-entropy. Deterministic in `seed`.
pub fn train_member(
    features: &[f64],
    labels: &[usize],
    n_classes: usize,
    mixup_cfg: &MixupConfig,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<TinyClassifier> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if !features.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch("features do not split into rows".into()));
    }
    let d = features.len() / n;
    if labels.iter().any(|&y| y >= n_classes) {
        return Err(Error::InvalidInput("training label out of range".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let mut net = TinyClassifier::init(d, hyper.hidden, n_classes, hyper.init_std, seed)?;
    let mut rng = rng_for(seed, STREAM_TRAIN);
    let batch = hyper.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut velocity = vec![0.0; net.params.len()];
    let mut xb = vec![0.0; batch * d];
    let mut yb = vec![0.0; batch * n_classes];

    for step in 0..hyper.steps {
        for b in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            xb[b * d..(b + 1) * d].copy_from_slice(&features[i * d..(i + 1) * d]);
            let y = &mut yb[b * n_classes..(b + 1) * n_classes];
            y.iter_mut().for_each(|v| *v = 0.0);
            y[labels[i]] = 1.0;
        }
        if mixup_cfg.enabled() && batch >= 2 {
            mixup(&mut xb, d, &mut yb, n_classes, mixup_cfg, &mut rng)?;
        }
        let (loss, grad) = net.loss_and_gradient(&xb, &yb);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = hyper.momentum * *v - hyper.learning_rate * g;
            *p += *v;
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
    }
    Ok(net)
}
