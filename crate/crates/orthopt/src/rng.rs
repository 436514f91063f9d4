//! Deterministic pseudorandom generation.
//!
//! Everything stochastic in this crate flows through [`Rng`], a xoshiro256**
//! generator seeded through splitmix64 expansion. Both algorithms are exactly
//! specified and trivially portable, so a seed reproduces the same ensembles,
//! datasets, and traces on any platform or in any other language.

/// splitmix64: a 64-bit mixing generator used to expand seeds.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// xoshiro256**: the main generator.
///
/// State is seeded by four successive splitmix64 outputs, per the generator
/// authors' recommendation, so any 64-bit seed (including 0) is safe.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    spare_gaussian: Option<f64>,
}

#[inline]
fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let s = [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()];
        Self {
            s,
            spare_gaussian: None,
        }
    }

    /// Generator for the `index`-th member of a family keyed by `seed`.
    ///
    /// Members can be produced independently (and hence in parallel) because
    /// each one owns a generator derived from `seed + index`.
    pub fn for_index(seed: u64, index: u64) -> Self {
        Self::new(seed.wrapping_add(index))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = rotl(self.s[1].wrapping_mul(5), 7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = rotl(self.s[3], 45);
        result
    }

    /// Uniform draw on the open interval (0, 1).
    ///
    /// Uses the top 53 bits offset by half an ulp, so 0.0 and 1.0 are both
    /// unreachable and the value is always a valid `ln` argument.
    pub fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * 2.0_f64.powi(-53)
    }

    /// Uniform draw on [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_open_unit()
    }

    /// Uniform integer draw from [0, n) by rejection, bias-free.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index needs a nonempty range");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw via Box-Muller on open-interval uniforms.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = self.next_open_unit();
        let u2 = self.next_open_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_gaussian();
        }
    }
}
