//! Labeled sub-seed derivation.
//!
//! A single root seed fans out into independent streams keyed by a label and
//! an index path, so adding draws to one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for `label` at the given index path.
    pub fn seed(&self, label: &str, path: &[u64]) -> u64 {
        let mut h = splitmix(self.root ^ fnv1a(label));
        for &p in path {
            h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        h
    }

    /// A child tree rooted at the derived seed.
    pub fn child(&self, label: &str, path: &[u64]) -> SeedTree {
        SeedTree::new(self.seed(label, path))
    }

    pub fn rng(&self, label: &str, path: &[u64]) -> Rng {
        Rng::seed_from_u64(self.seed(label, path))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
