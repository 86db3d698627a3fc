//! Deterministic splittable random streams.
//!
//! A [`RngStream`] is a value, not a generator: it names a stream by
//! `(seed, path)` where the path is a sequence of 64-bit indices such as
//! (replicate id, time step, purpose tag). Instantiating the stream always
//! yields the identical byte sequence, and distinct paths yield streams that
//! are independent for all practical purposes. Replicate workers therefore
//! never share mutable RNG state, and results cannot depend on the worker
//! count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Purpose tag mixed into a stream path so that different uses of the same
/// (replicate, step) coordinate cannot collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Init,
    Noise,
    Survival,
    OffspringCount,
    OffspringLocation,
    Immigrant,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::Init => 0x10,
            StreamTag::Noise => 0x11,
            StreamTag::Survival => 0x12,
            StreamTag::OffspringCount => 0x13,
            StreamTag::OffspringLocation => 0x14,
            StreamTag::Immigrant => 0x15,
        }
    }
}

/// A named, reproducible random stream: identical `(seed, path)` always
/// produces the identical variates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, path: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Derives the child stream with one more path element.
    pub fn child(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        RngStream { seed: self.seed, path }
    }

    /// Derives the substream for a purpose tag.
    pub fn with_tag(&self, tag: StreamTag) -> Self {
        self.child(tag.code())
    }

    fn key(&self) -> [u8; 32] {
        // Absorb the path into four lanes of a splitmix chain; each lane uses
        // a distinct starting offset so the 256-bit key is not four copies of
        // the same 64-bit state.
        let mut key = [0u8; 32];
        for lane in 0u64..4 {
            let mut h = splitmix(self.seed ^ lane.wrapping_mul(GOLDEN));
            for (i, &p) in self.path.iter().enumerate() {
                h = splitmix(
                    h.wrapping_add(splitmix(p ^ (i as u64).wrapping_mul(GOLDEN)))
                        .wrapping_add(GOLDEN),
                );
            }
            key[(lane as usize) * 8..(lane as usize + 1) * 8].copy_from_slice(&h.to_le_bytes());
        }
        key
    }

    /// Instantiates the stream as a stateful generator positioned at its
    /// beginning. Calling twice returns generators producing identical
    /// sequences.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key())
    }

    /// `n` i.i.d. standard normal variates, deterministic in `(seed, path)`.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Standard normal sampling with the stream contract of [`RngStream`].
pub fn sample_std_normal(stream: &RngStream, n: usize) -> Vec<f64> {
    stream.normals(n)
}
