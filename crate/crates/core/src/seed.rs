//! Named random sub-streams derived from a single root seed.
//!
//! Every consumer of randomness (split selection, weight init, dropout, data
//! shuffling, synthetic generation) asks for its own stream by name plus an
//! index path, so changing one component never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn root(seed: u64) -> Self {
        Self {
            state: splitmix64(seed),
        }
    }

    /// Child stream keyed by a name, e.g. `"split"`, `"init"`, `"dropout"`.
    pub fn named(&self, name: &str) -> Self {
        Self {
            state: splitmix64(self.state ^ fnv1a(name)),
        }
    }

    /// Child stream keyed by an index (run number, step, tree, ...).
    pub fn at(&self, index: u64) -> Self {
        Self {
            state: splitmix64(self.state.rotate_left(17) ^ splitmix64(index)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.state)
    }
}
