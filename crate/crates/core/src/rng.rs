//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the 64-bit seed (expanded
//! with `rand_core`'s PCG32 seeding) and selected by a 64-bit stream id.
//! Streams derived from the same parent never share state, so drawing from
//! the dropout stream cannot shift the data-shuffle stream and vice versa.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Well-known consumers, each with its own substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    Split = 4,
    Generator = 5,
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a label into a fresh, well-spread seed.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for the given consumer. Does not depend on, or
    /// advance, the state of `self`.
    pub fn substream(&self, stream: Stream) -> Self {
        self.fork(stream as u64)
    }

    /// Like [`Rng::substream`] with an arbitrary numeric label (epoch index, clip id, ...).
    pub fn fork(&self, label: u64) -> Self {
        Self::with_stream(self.seed, derive_seed(self.stream, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_do_not_interfere() {
        let root = Rng::new(9);
        let mut shuffle_a = root.substream(Stream::Shuffle);
        let expected: Vec<u64> = (0..100).map(|_| shuffle_a.next_u64()).collect();

        let root = Rng::new(9);
        let mut dropout = root.substream(Stream::Dropout);
        for _ in 0..1000 {
            dropout.next_u64();
        }
        let mut shuffle_b = root.substream(Stream::Shuffle);
        let got: Vec<u64> = (0..100).map(|_| shuffle_b.next_u64()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn substreams_differ() {
        let root = Rng::new(1);
        let mut a = root.substream(Stream::Init);
        let mut b = root.substream(Stream::Dropout);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = root.fork(3);
        let mut d = root.fork(4);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(5);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
