//! Shared fixtures for the benchmarks.

use std::sync::{Arc, OnceLock};

use ballotchain_core::{generate_election, ElectionSetup, SetupParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A 2048-bit election, generated once per process.
pub fn production_setup() -> Arc<ElectionSetup> {
    static SETUP: OnceLock<Arc<ElectionSetup>> = OnceLock::new();
    SETUP
        .get_or_init(|| {
            let params = SetupParams::production("bench", &["A", "B", "C", "D"], 4);
            Arc::new(generate_election(&params, &mut rng(1)).expect("setup"))
        })
        .clone()
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
