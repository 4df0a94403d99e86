//! Deterministic, splittable random streams.
//!
//! Every stream is a ChaCha20 keystream addressed by `(seed, stream_id)`.
//! ChaCha is counter based, so a child stream costs nothing to create and
//! draws never depend on how other streams were scheduled. Child stream ids
//! are derived by a non-commutative mix of the parent id and the child index,
//! which makes `split(split(s, 0), 1)` and `split(split(s, 1), 0)` distinct.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-owner random stream. Clone it to replay, `split` it to fan out.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    core: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut core = ChaCha20Rng::from_seed(key);
        core.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            core,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream, a pure function of `(seed, stream_id, child_index)`.
    ///
    /// The child starts at the beginning of its own keystream, regardless of
    /// how many draws the parent has made.
    pub fn split(&self, child_index: u64) -> RngStream {
        let id = mix64(
            mix64(self.stream_id.wrapping_add(GOLDEN)).wrapping_mul(GOLDEN)
                ^ mix64(child_index.wrapping_add(1).wrapping_mul(0xD6E8_FEB8_6659_FD93)),
        );
        RngStream::with_stream(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; each pair of uniforms yields two draws.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }

    /// Uniform integer in `[0, n)` by rejection on the top bits.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below needs n > 0");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }
}
