//! Fixed, fully specified random number generation.
//!
//! Every random quantity in the crate flows from a root seed through the
//! generator below, so seeded runs reproduce bit-exactly across platforms and
//! reimplementations in other languages can match the streams.
//!
//! Generator: SplitMix64 (Steele, Lea & Flood). State advances by the odd
//! constant GAMMA = 0x9E3779B97F4A7C15 and the output is the 64-bit finalizer
//! with multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB and shifts
//! 30/27/31.
//!
//! Uniform doubles: `u = (next_u64() >> 11) * 2^-53` in [0, 1).
//!
//! Normal variates: Box–Muller on the uniform stream. Each pair of uniforms
//! (u1, u2) is drawn in order, u1 mapped to (0, 1] as ((bits >> 11) + 1) * 2^-53,
//! and both outputs r·cos(2π u2), r·sin(2π u2) with r = √(−2 ln u1) are
//! consumed in that order (the sine branch is cached for the following call).

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;

const TWO_POW_NEG53: f64 = 1.0 / (1u64 << 53) as f64;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// Derives an independent component seed from the root seed.
///
/// `derive_seed(root, k) = mix64(root + GAMMA·(k + 1))`, documented so that
/// external tooling can reproduce per-component streams.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    mix64(root.wrapping_add(GAMMA.wrapping_mul(stream.wrapping_add(1))))
}

/// SplitMix64 generator with a Box–Muller spare cache and a draw counter.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare_normal: Option<f64>,
    draws: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 {
            state: seed,
            spare_normal: None,
            draws: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        self.draws += 1;
        mix64(self.state)
    }

    /// Number of raw 64-bit draws consumed so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    /// Uniform double in [0, 1).
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform double in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform01() * n as f64) as usize % n
    }

    /// Standard normal via Box–Muller; consumes two uniforms per pair.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so ln(u1) is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53;
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs for seed 0 from the published SplitMix64 algorithm.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derived_seeds_differ() {
        let s0 = derive_seed(42, 0);
        let s1 = derive_seed(42, 1);
        let s2 = derive_seed(43, 0);
        assert_ne!(s0, s1);
        assert_ne!(s0, s2);
        assert_eq!(s0, derive_seed(42, 0));
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let u = rng.uniform01();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SplitMix64::new(1234);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn draw_count_tracks_consumption() {
        let mut rng = SplitMix64::new(5);
        rng.normal(); // two uniforms
        assert_eq!(rng.draw_count(), 2);
        rng.normal(); // spare, no draw
        assert_eq!(rng.draw_count(), 2);
        rng.uniform01();
        assert_eq!(rng.draw_count(), 3);
    }
}
