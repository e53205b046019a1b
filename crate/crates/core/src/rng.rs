//! Counter-based random streams.
//!
//! Every trajectory or SDE path draws from its own stream, keyed by
//! `(seed, stream_index)`. Streams are independent of thread scheduling, so
//! runs are reproducible bit-for-bit no matter how work is distributed.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream of uniforms and Gaussians for one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    state: u64,
    spare_normal: Option<f64>,
}

impl NoiseStream {
    /// Stream `index` under the master `seed`. Distinct indices give
    /// statistically independent streams.
    pub fn new(seed: u64, index: u64) -> Self {
        // Decorrelate the (seed, index) pair before use.
        let mut s = seed ^ index.wrapping_mul(GOLDEN).rotate_left(17);
        splitmix64(&mut s);
        let state = splitmix64(&mut s);
        NoiseStream {
            state,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in the half-open interval `(0, 1]`; never returns 0, so it is
    /// safe under `ln`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box–Muller; the paired draw is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let phi = TAU * self.uniform();
        self.spare_normal = Some(r * phi.sin());
        r * phi.cos()
    }

    /// Fill `out` with independent standard normals.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Sample an index from the cumulative weights `cdf` (last entry ~ 1).
    #[inline]
    pub fn sample_index(&mut self, cdf: &[f64]) -> usize {
        let u = self.uniform();
        match cdf.iter().position(|&c| u <= c) {
            Some(k) => k,
            None => cdf.len() - 1,
        }
    }
}

/// Precomputed cumulative distribution for repeated atom sampling.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = NoiseStream::new(42, 7);
        let mut b = NoiseStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_across_indices() {
        let a: Vec<u64> = {
            let mut s = NoiseStream::new(1, 0);
            (0..8).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = NoiseStream::new(1, 1);
            (0..8).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn normal_moments() {
        let mut s = NoiseStream::new(2024, 0);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sampled_indices_follow_weights() {
        let cdf = cumulative(&[0.2, 0.5, 0.3]);
        let mut s = NoiseStream::new(9, 3);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[s.sample_index(&cdf)] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        for (f, w) in freqs.iter().zip([0.2, 0.5, 0.3]) {
            assert!((f - w).abs() < 0.01, "freq {f} vs weight {w}");
        }
    }
}
