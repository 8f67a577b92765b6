//! Federated reservoir computing for GNSS jammer classification.
//!
//! A fixed echo state network turns spectrogram sequences into feature
//! vectors; a ridge readout on top of them is trained either centrally or
//! across clients that share only the sufficient statistics `Y Φᵀ` and
//! `Φ Φᵀ`. Because those statistics add up exactly, the federated readout is
//! identical (to rounding) to the centralized one.

pub mod error;
pub mod esn;
pub mod experiment;
pub mod features;
pub mod federated;
pub mod par;
pub mod partition;
pub mod signal;
mod sums;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use error::{Error, Result};
pub use esn::{
    classify, init_reservoir, run_sequence, solve_readout, spectral_radius, FeatureVector,
    ReadoutWeights, ReservoirConfig, ReservoirWeights,
};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, RoundMetrics};
pub use features::{normalize_and_sequence, resize_bilinear, spectrogram, FeatureSequence, SpectrogramImage};
pub use federated::{aggregate, client_stats, incremental_update, plan_round, solve_global, AggregateStats, ClientStats, RoundPlan};
pub use par::Execution;
pub use partition::{partition_dirichlet, partition_iid, split_train_test, Partition};
pub use signal::{generate_dataset, synthesize_sample, BasebandRecord, JammerClass, SignalParams};

/// A ChaCha generator for `seed` positioned at the start of `stream`.
///
/// Distinct streams of the same seed are independent, which lets every
/// record or component draw from its own generator regardless of the order
/// in which work is scheduled.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a named sub-domain (splitmix64 finalizer).
///
/// Used so that one experiment seed can drive data synthesis, partitioning,
/// participant sampling and the reservoir without the streams overlapping.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
