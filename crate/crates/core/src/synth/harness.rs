#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixup::MixupConfig;
use super::mlp::{train_member, Hyperparams, TinyClassifier};
use super::task::SynthTask;
use crate::error::{Error, Result};
use crate::predictions::{EnsemblePredictions, LabeledPredictions};

/// Everything needed to generate data and train an ensemble on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub n_classes: usize,
    pub input_dim: usize,
    pub informative_dims: usize,
    /// Standard deviation of the class-mean coordinates.
    pub separation: f64,
    /// Within-class noise standard deviation.
    pub sigma: f64,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    /// Samples from a task with unseen classes; 0 skips them.
    pub ood_n: usize,
    pub members: usize,
    pub mixup: MixupConfig,
    pub hyper: Hyperparams,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            input_dim: 20,
            informative_dims: 20,
            separation: 0.5,
            sigma: 1.0,
            train_n: 950,
            val_n: 50,
            test_n: 2000,
            ood_n: 1000,
            members: 10,
            mixup: MixupConfig { alpha: 1.0 },
            hyper: Hyperparams::default(),
            seed: 0,
        }
    }
}

impl HarnessConfig {
    /// Seeds of the `members` ensemble members, distinct by construction.
    pub fn member_seeds(&self) -> Vec<u64> {
        (0..self.members as u64)
            .map(|k| self.seed.wrapping_mul(10_007).wrapping_add(k + 1))
            .collect()
    }

    pub fn task(&self) -> Result<SynthTask> {
        SynthTask::random(
            self.n_classes,
            self.input_dim,
            self.informative_dims,
            self.separation,
            self.sigma,
            self.seed,
        )
    }

    fn data_seed(&self, split: u64) -> u64 {
        self.seed.wrapping_mul(31).wrapping_add(split)
    }
}

/// Member predictions on the shared validation, test and OOD splits.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessData {
    pub task: SynthTask,
    pub val: EnsemblePredictions,
    pub test: EnsemblePredictions,
    pub ood: Option<EnsemblePredictions>,
    pub val_posterior: LabeledPredictions,
    pub test_posterior: LabeledPredictions,
    /// Row-major `n x input_dim` inputs, usable as embeddings.
    pub train_features: Vec<f64>,
    pub test_features: Vec<f64>,
    pub classifiers: Vec<TinyClassifier>,
}

/// Trains one member per seed on a shared training set and evaluates each
/// on shared validation, test and (optionally) OOD splits.
///
/// Members differ only through their seed (initialisation, batch order,
/// mixup draws). Training runs in parallel; results do not depend on the
/// schedule.
pub fn build_ensemble(cfg: &HarnessConfig, member_seeds: &[u64]) -> Result<HarnessData> {
    if member_seeds.is_empty() {
        return Err(Error::InvalidParameter("ensemble needs at least one member".into()));
    }
    let mut sorted = member_seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != member_seeds.len() {
        return Err(Error::InvalidParameter("member seeds must be distinct".into()));
    }
    let task = cfg.task()?;
    let train = task.generate(cfg.train_n, cfg.data_seed(1))?;
    let val = task.generate(cfg.val_n, cfg.data_seed(2))?;
    let test = task.generate(cfg.test_n, cfg.data_seed(3))?;
    let ood = if cfg.ood_n > 0 {
        let novel = task.novel_classes(cfg.informative_dims, cfg.separation, cfg.seed.wrapping_add(0x00d))?;
        Some(task.generate_foreign(&novel, cfg.ood_n, cfg.data_seed(4))?)
    } else {
        None
    };

    let ids: Vec<String> = (0..member_seeds.len()).map(|k| format!("m{k:02}")).collect();
    let trained: Vec<Result<TinyClassifier>> = maybe_par_iter!(member_seeds)
        .map(|&s| train_member(&train.features, &train.labels, cfg.n_classes, &cfg.mixup, &cfg.hyper, s))
        .collect();
    let mut diverged = Vec::new();
    let mut classifiers = Vec::with_capacity(trained.len());
    for (id, t) in ids.iter().zip(trained) {
        match t {
            Ok(c) => classifiers.push(c),
            Err(Error::TrainingDiverged { step, loss }) => {
                diverged.push(format!("{id} (step {step}, loss {loss})"))
            }
            Err(e) => return Err(e),
        }
    }
    if !diverged.is_empty() {
        return Err(Error::MembersDiverged(diverged));
    }

    let evaluate = |features: &[f64], labels: &[usize]| -> Result<EnsemblePredictions> {
        let members = classifiers
            .iter()
            .map(|c| c.predict(features, labels))
            .collect::<Result<Vec<_>>>()?;
        EnsemblePredictions::new(members, ids.clone())
    };
    Ok(HarnessData {
        val: evaluate(&val.features, &val.labels)?,
        test: evaluate(&test.features, &test.labels)?,
        ood: ood.as_ref().map(|o| evaluate(&o.features, &o.labels)).transpose()?,
        val_posterior: val.posteriors,
        test_posterior: test.posteriors,
        train_features: train.features,
        test_features: test.features,
        classifiers,
        task,
    })
}
