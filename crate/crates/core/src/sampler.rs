//! Seeded partition of the sentence store into disjoint five-sentence groups.
//!
//! The permutation is a Durstenfeld (Fisher-Yates) shuffle driven by ChaCha20
//! seeded through `SeedableRng::seed_from_u64`. Bounded draws use rejection
//! sampling on raw `u64` words, so the permutation depends only on the
//! ChaCha20 keystream and is identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceStore;

pub const GROUP_SIZE: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("corpus has {0} sentences, at least {GROUP_SIZE} are required")]
    CorpusTooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub group_id: usize,
    pub sentence_ids: [usize; GROUP_SIZE],
}

/// Uniform draw from `0..bound` without modulo bias.
fn bounded(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = bounded(&mut rng, i as u64 + 1) as usize;
        ids.swap(i, j);
    }
    ids
}

pub fn sample_groups(
    store: &SentenceStore,
    seed: u64,
    max_groups: Option<usize>,
) -> Result<Vec<SampleGroup>, SamplerError> {
    if store.len() < GROUP_SIZE {
        return Err(SamplerError::CorpusTooSmall(store.len()));
    }
    let perm = permutation(store.len(), seed);
    let limit = max_groups.unwrap_or(usize::MAX);
    Ok(perm
        .chunks_exact(GROUP_SIZE)
        .take(limit)
        .enumerate()
        .map(|(group_id, chunk)| SampleGroup {
            group_id,
            sentence_ids: chunk.try_into().expect("chunk has GROUP_SIZE ids"),
        })
        .collect())
}
