//! Desk-scale stand-ins for the data, augmentation and models that produce
//! ensembles: a Gaussian task with a closed-form posterior, mixup, and a
//! one-hidden-layer classifier trained by mini-batch SGD.

mod harness;
mod mixup;
mod mlp;
mod task;

pub use harness::{build_ensemble, HarnessConfig, HarnessData};
pub use mixup::{mixup, mixup_with, sample_beta, MixupConfig};
pub use mlp::{train_member, Hyperparams, TinyClassifier};
pub use task::{Dataset, SynthTask};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable generator for `(seed, stream)`.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
