//! Seed discipline.
//!
//! Every random stage draws from a ChaCha8 generator (portable, identical
//! output on every platform) seeded from the master seed through a
//! SplitMix64 mix of `(master, purpose, index)`. Any stage can therefore be
//! rerun in isolation, and adding a day or a stage never perturbs the
//! streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Simulate = 1,
    Sample = 2,
    Subsample = 3,
    Split = 4,
    CrossValidation = 5,
    Synthetic = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ index)
}

pub fn stream(master: u64, purpose: Purpose, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose, index))
}
