//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a [`SeedStream`]. A stream is a
//! 64-bit key; child streams are derived by mixing the parent key with a tag
//! through SplitMix64, so `master.child(g).child(tags::LATENT_OBS)` names the
//! observational-latent stream of graph `g` regardless of what other streams
//! have been consumed. Each key seeds an independent ChaCha8 generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Well-known child tags used by the experiment driver.
pub mod tags {
    pub const DAG: u64 = 1;
    pub const MECHANISMS: u64 = 2;
    pub const DECODER: u64 = 3;
    pub const LATENT_OBS: u64 = 4;
    pub const LATENT_ENV1: u64 = 5;
    pub const LATENT_ENV2: u64 = 6;
    pub const ESTIMATOR: u64 = 7;
    pub const INIT: u64 = 8;
    pub const COUPLING: u64 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedStream(pub u64);

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(seed)
    }

    pub fn child(self, tag: u64) -> Self {
        SeedStream(splitmix64(splitmix64(self.0) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03)))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
