//! Counter-addressed random streams.
//!
//! Every stream is a ChaCha20 keystream addressed by `(seed, stream, word)`,
//! so the plaintext oracle and the encrypted protocol can read the exact same
//! normal draws for sample `j` without sharing generator state.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream carrying the per-sample standard normal vectors of the protocol.
pub const STREAM_SAMPLES: u64 = 0;
/// Stream carrying the published operator schedule.
pub const STREAM_SCHEDULE: u64 = 1;
/// Stream carrying coordinator masks.
pub const STREAM_MASKS: u64 = 2;
/// Stream carrying backend key material and ciphertext nonces.
pub const STREAM_BACKEND: u64 = 3;

const TWO_PI: f64 = std::f64::consts::TAU;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct CounterRng {
    inner: ChaCha20Rng,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Generator positioned at 32-bit word `word` of the `(seed, stream)` keystream.
    pub fn at(seed: u64, stream: u64, word: u128) -> Self {
        let mut rng = Self::new(seed, stream);
        rng.inner.set_word_pos(word);
        rng
    }

    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform on `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * INV_2_53
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Two independent standard normals (Box–Muller). Always consumes two words
    /// of 64 bits, which keeps per-sample offsets fixed.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TWO_PI * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Per-sample pair `(z₁ʲ, z₂ʲ)` of standard normal 3-vectors, one per operator.
pub type ZPair = ([f64; 3], [f64; 3]);

/// 32-bit words consumed per protocol sample: six normals, three Box–Muller pairs.
const WORDS_PER_ZPAIR: u128 = 12;

/// Counter-addressed source of the protocol's standard normal draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZStream {
    pub seed: u64,
}

impl ZStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Draws for sample `j` (0-based), independent of any other access.
    pub fn pair_at(&self, j: u64) -> ZPair {
        let mut rng = CounterRng::at(self.seed, STREAM_SAMPLES, j as u128 * WORDS_PER_ZPAIR);
        draw_zpair(&mut rng)
    }

    /// Sequential draws starting at sample 0; identical to `pair_at(0), pair_at(1), ...`.
    pub fn iter(&self) -> impl Iterator<Item = ZPair> {
        let mut rng = CounterRng::new(self.seed, STREAM_SAMPLES);
        std::iter::repeat_with(move || draw_zpair(&mut rng))
    }
}

fn draw_zpair(rng: &mut CounterRng) -> ZPair {
    let (a, b) = rng.normal_pair();
    let (c, d) = rng.normal_pair();
    let (e, f) = rng.normal_pair();
    ([a, b, c], [d, e, f])
}

/// SplitMix64 finalizer; used for seed derivation and payload sealing.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
