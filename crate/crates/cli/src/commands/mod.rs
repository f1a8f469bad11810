//! Subcommand implementations. Random streams are split from the root seed
//! by purpose, so changing one stage never shifts another.

pub mod compare;
pub mod fit;
pub mod gen;
pub mod plotdata;
pub mod selftest;

use bayes_ltv::rng::derive_seed;
use bayes_ltv::TrainConfig;

use crate::config::RunConfig;

pub const STREAM_FIXTURE: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_SAMPLING: u64 = 2;
pub const STREAM_ANT: u64 = 3;
pub const STREAM_SELFTEST: u64 = 4;

pub fn stream(cfg: &RunConfig, tag: u64) -> u64 {
    derive_seed(cfg.seed, tag)
}

/// `train` with its seed mixed into the root training stream.
pub fn seeded(cfg: &RunConfig, train: &TrainConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(stream(cfg, STREAM_TRAIN), train.seed),
        ..train.clone()
    }
}

/// Scenario seed of comparison seed `s`.
pub fn ant_seed(cfg: &RunConfig, s: u64) -> u64 {
    derive_seed(stream(cfg, STREAM_ANT), s)
}
