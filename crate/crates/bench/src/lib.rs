//! Fixtures shared by the benchmarks.

use pufkex_core::crypto::{random_word, SeededWords, Word256};
use pufkex_core::harness::World;
use pufkex_core::sram_puf::{PufFunction, PufParams};

pub fn sample_words(seed: u64, n: usize) -> Vec<Word256> {
    let mut rng = SeededWords::derived(seed, "bench words");
    (0..n).map(|_| random_word(&mut rng)).collect()
}

pub fn sample_puf(seed: u64) -> PufFunction {
    PufFunction::provision(&PufParams::default(), seed).expect("default parameters")
}

/// A simulated deployment ready to run handshakes back to back.
pub fn world(seed: u64) -> World {
    World::new(seed)
}
