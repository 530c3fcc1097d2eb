//! Counter-keyed random streams.
//!
//! Every random decision in a run is drawn from a ChaCha stream selected by
//! `(seed, position, population, timestep, row)`, so results do not depend
//! on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A generator for one named purpose, independent of all others.
pub(crate) fn seeded(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix(&[purpose]));
    rng
}

/// Source of excess-spike drop decisions.
///
/// `position` is a batch counter: the training loop advances it once per
/// processed batch so that successive batches see fresh draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRng {
    pub seed: u64,
    pub position: u64,
}

impl DropRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, position: 0 }
    }

    pub fn at(seed: u64, position: u64) -> Self {
        Self { seed, position }
    }

    pub fn advance(&mut self) {
        self.position += 1;
    }

    /// The stream for one row of one population at one timestep.
    pub fn stream(&self, population: usize, timestep: usize, row: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(mix(&[
            self.position,
            population as u64,
            timestep as u64,
            row as u64,
        ]));
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = DropRng::at(7, 3);
        assert_eq!(a.stream(1, 2, 3).next_u64(), a.stream(1, 2, 3).next_u64());
        let base = a.stream(1, 2, 3).next_u64();
        assert_ne!(base, a.stream(1, 2, 4).next_u64());
        assert_ne!(base, a.stream(2, 2, 3).next_u64());
        assert_ne!(base, DropRng::at(7, 4).stream(1, 2, 3).next_u64());
        assert_ne!(base, DropRng::at(8, 3).stream(1, 2, 3).next_u64());
    }

    #[test]
    fn stream_values_are_frozen() {
        // Guards against silent changes to the keying scheme, which would
        // break bit-for-bit reproducibility of saved runs.
        let first = DropRng::at(42, 0).stream(0, 0, 0).next_u64();
        assert_eq!(first, 0xee0d_44a2_caa3_1eef);
    }
}
