//! Counter-based deterministic random numbers.
//!
//! Every Gaussian draw is a pure function of a (seed, stream, step) tuple, so
//! ensemble members and Fourier modes can be sampled in any order, on any
//! number of threads, with bitwise-identical results.

/// SplitMix64 finaliser.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapse a counter tuple into one 64-bit word.
#[inline]
pub fn key(parts: &[u64]) -> u64 {
    let mut h = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        h = mix(h ^ p);
    }
    h
}

/// Uniform in (0, 1]: never returns 0 so logarithms are safe.
#[inline]
fn unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

/// Two independent standard normals from one counter key (Box-Muller).
pub fn gaussian_pair(k: u64) -> (f64, f64) {
    let u1 = unit(mix(k ^ 0x1234_5678_9abc_def0));
    let u2 = unit(mix(k ^ 0x0fed_cba9_8765_4321));
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Small sequential generator for test fixtures and sampling loops.
#[derive(Clone, Debug)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: mix(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        gaussian_pair(self.next_u64()).0
    }
}
