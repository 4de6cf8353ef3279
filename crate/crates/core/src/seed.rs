//! Derived sub-seeds.
//!
//! Every random decision in an episode draws from its own stream, keyed by the
//! path `(run seed, user, interaction, round, purpose, slot)`. Streams never
//! share state, so any single decision replays bit-exactly in isolation.

use rand::SeedableRng;

use crate::reward::SimRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    MainSet = 1,
    MainUser = 2,
    MainAssistant = 3,
    HeldoutSet = 4,
    HeldoutUser = 5,
    EvalAssistant = 6,
    Teaching = 7,
    Population = 8,
    Targeting = 9,
    Session = 10,
    Shuffle = 11,
}

/// Folds a sequence of path components into one 64-bit seed.
pub fn derive(components: &[u64]) -> u64 {
    components
        .iter()
        .fold(0x5EED_u64, |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Seed path for one episode; purposes and slots extend it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPath {
    pub run_seed: u64,
    pub user_seed: u64,
    pub interaction: u64,
}

impl SeedPath {
    pub fn new(run_seed: u64, user_seed: u64, interaction: u64) -> Self {
        Self {
            run_seed,
            user_seed,
            interaction,
        }
    }

    /// A stream tied to one round of the main line.
    pub fn round(&self, round: usize, purpose: Purpose) -> u64 {
        derive(&[
            self.run_seed,
            self.user_seed,
            self.interaction,
            round as u64,
            purpose as u64,
        ])
    }

    /// A stream shared by all interactions of one (user, run seed) pair.
    pub fn per_user(&self, slot: usize, purpose: Purpose) -> u64 {
        derive(&[
            self.run_seed,
            self.user_seed,
            u64::MAX,
            slot as u64,
            purpose as u64,
        ])
    }

    /// A stream tied to one held-out decision at one round.
    pub fn eval(&self, round: usize, slot: usize) -> u64 {
        derive(&[
            self.run_seed,
            self.user_seed,
            self.interaction,
            round as u64,
            Purpose::EvalAssistant as u64,
            slot as u64,
        ])
    }
}
