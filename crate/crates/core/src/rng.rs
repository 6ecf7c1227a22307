//! Seed discipline.
//!
//! Every randomized operation takes one root seed and derives independent,
//! named substreams from it (`"init"`, `"z"`, `"known"`, ...). Two code paths
//! that ask for the same `(root, name, index)` triple get the same numbers,
//! which is what lets plain sampling and degenerate inpainting agree bit for
//! bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A root seed from which named substreams are spawned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derived seed for substream `name` at position `index`.
    pub fn derive(&self, name: &str, index: u64) -> u64 {
        splitmix64(splitmix64(self.root ^ fnv1a(name)) ^ splitmix64(index.wrapping_add(1)))
    }

    pub fn rng(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(name, index))
    }

    /// A child root, for handing a whole sub-computation its own namespace.
    pub fn child(&self, name: &str, index: u64) -> SeedStream {
        SeedStream::new(self.derive(name, index))
    }

    pub fn normal_vec(&self, name: &str, index: u64, len: usize) -> Vec<f32> {
        normal_vec(&mut self.rng(name, index), len)
    }
}

pub fn normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng))
        .collect()
}
