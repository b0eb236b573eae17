//! Seeded, platform-independent random numbers.
//!
//! PCG-64 (XSL-RR 128/64) drives everything; Gaussian draws use the
//! Box–Muller transform so two implementations of the same algorithm agree
//! bit for bit.

use rand_core::Rng as _;
use rand_pcg::Pcg64;

use crate::tensor::VideoTensor;

/// Identifier recorded alongside seeds in logs and checkpoints.
pub const ALGORITHM: &str = "pcg64-xsl-rr/box-muller";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-owner random stream identified by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: Pcg64,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let state = ((splitmix64(seed) as u128) << 64) | splitmix64(seed ^ 0x5851_F42D_4C95_7F2D) as u128;
        Self {
            seed,
            stream,
            inner: Pcg64::new(state, stream as u128),
            spare: None,
        }
    }

    /// An independent child stream; depends only on this stream's identity
    /// and `key`, never on how many values were drawn so far.
    pub fn derive(&self, key: u64) -> Rng {
        let stream = splitmix64(self.stream ^ splitmix64(key.wrapping_add(1)));
        Rng::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is < 2^-64 * n which is irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    pub fn gaussian_like(&mut self, shape: [usize; 4]) -> VideoTensor {
        let n = shape.iter().product();
        VideoTensor::from_vec(shape, self.gaussian_vec(n)).expect("length matches shape")
    }
}
