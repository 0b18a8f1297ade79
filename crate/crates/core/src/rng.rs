//! Counter-based pseudo-random generator with per-path substreams.
//!
//! Draw `k` of substream `(seed, stream)` is a pure function of
//! `(seed, stream, k)`: results do not depend on evaluation order, thread
//! count, or how many other substreams were consumed. This is the
//! reproducibility contract the simulation modules rely on — path `j` of a
//! bundle always reads substream `(seed, j)`.
//!
//! The generator evaluates the SplitMix64 output function at an arbitrary
//! counter index; the key is derived from `(seed, stream)` by two mixing
//! rounds. Normal variates come from Box-Muller on two consecutive draws and
//! are always computed in `f64` before conversion to the target scalar, so a
//! given `(seed, stream, k)` yields one canonical value.

use crate::scalar::Real;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0x6A09_E667_F3BC_C909;

/// SplitMix64 finalizer: a bijective 64-bit mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One substream of the counter-based generator.
#[derive(Debug, Clone)]
pub struct SubstreamRng {
    key: u64,
    counter: u64,
}

impl SubstreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix(mix(seed ^ STREAM_SALT).wrapping_add(stream.wrapping_mul(GOLDEN)));
        Self { key, counter: 0 }
    }

    /// The raw 64-bit word at counter index `k`, independent of state.
    #[inline]
    pub fn word_at(seed: u64, stream: u64, k: u64) -> u64 {
        let key = mix(mix(seed ^ STREAM_SALT).wrapping_add(stream.wrapping_mul(GOLDEN)));
        mix(key.wrapping_add(k.wrapping_mul(GOLDEN)))
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let word = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        word
    }

    /// Uniform draw in the half-open interval (0, 1].
    #[inline]
    pub fn uniform_f64(&mut self) -> f64 {
        // 53 significant bits; +1 keeps the value strictly positive so logs
        // in Box-Muller stay finite.
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw (Box-Muller, cosine branch; two words consumed).
    #[inline]
    pub fn standard_normal<F: Real>(&mut self) -> F {
        let u1 = self.uniform_f64();
        let u2 = self.uniform_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        F::lit(radius * (std::f64::consts::TAU * u2).cos())
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform_in<F: Real>(&mut self, lo: F, hi: F) -> F {
        lo + (hi - lo) * F::lit(self.uniform_f64() - f64::EPSILON).max(F::zero())
    }
}
