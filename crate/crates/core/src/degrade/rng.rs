//! The benchmark's deterministic random source (scheme `fiqa-mix-v1`).
//!
//! * Item seed: the first 8 bytes (little-endian) of
//!   `SHA-256(master_seed as u64 LE ‖ clean_id as UTF-8)`.
//! * Stream: ChaCha20 keyed with `SHA-256("fiqa-mix-v1" ‖ item_seed as u64 LE)`,
//!   nonce and counter zero; 64-bit outputs are two consecutive 32-bit words,
//!   low word first.
//! * `unit()` is `(next_u64 >> 11) · 2⁻⁵³` in [0, 1); `below(n)` is
//!   `⌊unit() · n⌋`; `gaussian()` is the cosine branch of Box–Muller over
//!   `u1 = 1 − unit()` and `u2 = unit()`.
//!
//! The full draw order of a mix is documented on [`super::sample_mix`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const SCHEME: &str = "fiqa-mix-v1";

pub fn item_seed(master_seed: u64, clean_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(clean_id.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub struct MixRng(ChaCha20Rng);

impl MixRng {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(SCHEME.as_bytes());
        h.update(seed.to_le_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize()[..]);
        Self(ChaCha20Rng::from_seed(key))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
