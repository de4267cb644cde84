//! Counter-based deterministic random numbers.
//!
//! Draw `n` from a stream with key `k` is `mix(k + (n + 1) * GOLDEN)`, the
//! SplitMix64 finaliser applied to a counter. Independent streams are derived
//! by label with [`Rng::derive`], so a worker can reconstruct exactly the
//! stream of a run from `(seed, label)` no matter how many workers exist.

use alloc::vec::Vec;

use crate::math;
use crate::matrix::Matrix;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed ^ 0x6A09_E667_F3BC_C908),
            counter: 0,
        }
    }

    /// Child stream keyed by `hash(parent key, label)`; does not advance `self`.
    pub fn derive(&self, label: &str) -> Rng {
        Rng {
            key: mix(self.key ^ mix(fnv1a(label.as_bytes()))),
            counter: 0,
        }
    }

    /// Same as `derive` with an integer label.
    pub fn derive_index(&self, index: u64) -> Rng {
        Rng {
            key: mix(self.key.wrapping_add(mix(index.wrapping_add(GOLDEN)))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`, rejection-sampled so there is no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one value per pair of uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
    }

    pub fn gaussian(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| mean + std * self.normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches by construction")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
