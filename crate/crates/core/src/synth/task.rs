use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng_for;
use crate::error::{Error, Result};
use crate::predictions::LabeledPredictions;
use crate::prob::softmax_in_place;

const STREAM_MEANS: u64 = 1;
const STREAM_SAMPLES: u64 = 2;

/// Gaussian class-conditionals `N(mean_c, sigma^2 I)` with equal priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    n_classes: usize,
    input_dim: usize,
    /// Row-major `n_classes x input_dim`.
    means: Vec<f64>,
    sigma: f64,
    seed: u64,
}

/// Features, labels and exact Bayes posteriors of `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub posteriors: LabeledPredictions,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

impl SynthTask {
    pub fn new(n_classes: usize, input_dim: usize, means: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {n_classes}")));
        }
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be positive".into()));
        }
        if means.len() != n_classes * input_dim || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "expected {n_classes}x{input_dim} finite class means"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { n_classes, input_dim, means, sigma, seed })
    }

    /// Class means with i.i.d. `N(0, separation^2)` entries on the first
    /// `informative_dims` coordinates and zeros elsewhere.
    pub fn random(
        n_classes: usize,
        input_dim: usize,
        informative_dims: usize,
        separation: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if informative_dims == 0 || informative_dims > input_dim {
            return Err(Error::InvalidParameter(format!(
                "informative dimensions must lie in 1..={input_dim}"
            )));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad separation {separation}")));
        }
        let mut rng = rng_for(seed, STREAM_MEANS);
        let mut means = vec![0.0; n_classes * input_dim];
        for c in 0..n_classes {
            for j in 0..informative_dims {
                let z: f64 = StandardNormal.sample(&mut rng);
                means[c * input_dim + j] = separation * z;
            }
        }
        Self::new(n_classes, input_dim, means, sigma, seed)
    }

    /// A task over the same space whose classes are fresh draws, used as an
    /// out-of-distribution source.
    pub fn novel_classes(&self, informative_dims: usize, separation: f64, seed: u64) -> Result<Self> {
        Self::random(self.n_classes, self.input_dim, informative_dims, separation, self.sigma, seed)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.input_dim..(c + 1) * self.input_dim]
    }

    /// Exact `P(Y = c | x)` for every class.
    pub fn posterior_into(&self, x: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        for (c, o) in out.iter_mut().enumerate() {
            let mu = self.mean(c);
            let dot: f64 = x.iter().zip(mu).map(|(a, b)| a * b).sum();
            let norm: f64 = mu.iter().map(|m| m * m).sum();
            *o = (dot - 0.5 * norm) / s2;
        }
        softmax_in_place(out);
    }

    fn posteriors(&self, features: &[f64], labels: Vec<usize>) -> LabeledPredictions {
        let c = self.n_classes;
        let mut probs = vec![0.0; labels.len() * c];
        for (x, out) in features.chunks_exact(self.input_dim).zip(probs.chunks_exact_mut(c)) {
            self.posterior_into(x, out);
        }
        LabeledPredictions::from_parts_unchecked(probs, c, labels, None)
    }

    fn sample_features(&self, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rng_for(seed, STREAM_SAMPLES);
        let d = self.input_dim;
        let mut features = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        for x in features.chunks_exact_mut(d) {
            let y = rng.random_range(0..self.n_classes);
            for (xi, &mu) in x.iter_mut().zip(self.mean(y)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi = mu + self.sigma * z;
            }
            labels.push(y);
        }
        (features, labels)
    }

    /// `n` i.i.d. samples; deterministic in `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be positive".into()));
        }
        let (features, labels) = self.sample_features(n, seed);
        let posteriors = self.posteriors(&features, labels.clone());
        Ok(Dataset { features, dim: self.input_dim, labels, posteriors })
    }

    /// Samples drawn from `source` but described in this task's terms: the
    /// posteriors are this task's, and each label is this task's Bayes
    /// decision (the sample has no true class here).
    pub fn generate_foreign(&self, source: &SynthTask, n: usize, seed: u64) -> Result<Dataset> {
        if source.input_dim != self.input_dim {
            return Err(Error::ShapeMismatch("source task has a different input dimension".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be positive".into()));
        }
        let (features, _) = source.sample_features(n, seed);
        let mut posteriors = self.posteriors(&features, vec![0; n]);
        let labels: Vec<usize> = (0..n).map(|i| posteriors.predicted_class(i)).collect();
        posteriors = posteriors.with_labels(labels.clone())?;
        Ok(Dataset { features, dim: self.input_dim, labels, posteriors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{dc_score, ece, BinningSpec};

    #[test]
    fn far_apart_classes_are_almost_certain() {
        let task = SynthTask::new(2, 2, vec![-10.0, 0.0, 10.0, 0.0], 1.0, 0).unwrap();
        let d = task.generate(2000, 1).unwrap();
        assert!(d.posteriors.accuracy() > 0.99);
        assert!(d.posteriors.rows().all(|r| r[0].max(r[1]) > 0.999));
    }

    #[test]
    fn identical_means_give_uniform_posterior() {
        let task = SynthTask::new(2, 3, vec![0.5; 6], 1.0, 0).unwrap();
        let d = task.generate(4000, 3).unwrap();
        assert!(d.posteriors.rows().all(|r| (r[0] - 0.5).abs() < 1e-12));
        let tol = 3.0 / (d.len() as f64).sqrt();
        assert!(dc_score(&d.posteriors).unwrap().abs() < tol);
    }

    #[test]
    fn bayes_posterior_is_calibrated() {
        let task = SynthTask::random(4, 5, 5, 1.0, 1.0, 11).unwrap();
        let d = task.generate(5000, 12).unwrap();
        let tol = 3.0 / (d.len() as f64).sqrt();
        assert!(ece(&d.posteriors, &BinningSpec::default()).unwrap() < tol);

        let bin = SynthTask::random(2, 3, 3, 0.7, 1.0, 5).unwrap();
        let d = bin.generate(5000, 6).unwrap();
        assert!(dc_score(&d.posteriors).unwrap().abs() < tol);
    }

    #[test]
    fn generation_is_deterministic() {
        let task = SynthTask::random(3, 4, 2, 1.0, 1.0, 9).unwrap();
        assert_eq!(task, SynthTask::random(3, 4, 2, 1.0, 1.0, 9).unwrap());
        assert_eq!(task.generate(50, 2).unwrap(), task.generate(50, 2).unwrap());
        assert_ne!(task.generate(50, 2).unwrap(), task.generate(50, 3).unwrap());
    }

    #[test]
    fn invalid_tasks() {
        assert!(SynthTask::new(1, 2, vec![0.0, 0.0], 1.0, 0).is_err());
        assert!(SynthTask::new(2, 2, vec![0.0; 3], 1.0, 0).is_err());
        assert!(SynthTask::new(2, 1, vec![0.0; 2], 0.0, 0).is_err());
        assert!(SynthTask::random(2, 3, 4, 1.0, 1.0, 0).is_err());
        let t = SynthTask::random(2, 3, 3, 1.0, 1.0, 0).unwrap();
        assert!(t.generate(0, 0).is_err());
    }
}
