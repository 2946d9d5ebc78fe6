//! Counter-based random streams.
//!
//! Every random decision in the crate is addressed by `(seed, sequence,
//! step, site)`. The generator is ChaCha8 with the sequence index as the
//! stream id and `(step, site)` packed into the word position, so any draw
//! can be reproduced without replaying earlier ones. Sampling results are
//! therefore independent of thread count and of the order in which
//! sequences are scheduled.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Number of 32-bit words reserved per `(step, site)` slot (two `u64` draws).
const WORDS_PER_SITE: u128 = 4;
/// Word-position bits reserved for the site index within one step.
const SITE_BITS: u32 = 40;

/// Separates the key spaces of different consumers sharing a user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Autoregressive,
    Diffusion,
    Instance,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Autoregressive => 0x6172_5f73_616d_706c,
            Domain::Diffusion => 0x6469_6666_7573_696f,
            Domain::Instance => 0x696e_7374_616e_6365,
        }
    }
}

/// Random stream for one sequence at one step.
///
/// Each site owns two uniforms in `[0, 1)`; sites may be visited in any
/// order and a site always yields the same pair.
pub struct StepRng {
    rng: ChaCha8Rng,
    base: u128,
}

impl StepRng {
    pub fn new(seed: u64, domain: Domain, sequence: u64, step: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.tag());
        rng.set_stream(sequence);
        let base = (step as u128) << SITE_BITS;
        rng.set_word_pos(base);
        Self { rng, base }
    }

    /// The two uniforms owned by `site`.
    #[inline]
    pub fn uniforms(&mut self, site: usize) -> [f64; 2] {
        let target = self.base + site as u128 * WORDS_PER_SITE;
        if self.rng.get_word_pos() != target {
            self.rng.set_word_pos(target);
        }
        [to_unit(self.rng.next_u64()), to_unit(self.rng.next_u64())]
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Plain sequential stream, used for test-instance generation.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ Domain::Instance.tag());
    rng.set_stream(index);
    rng
}

/// Uniform in `[0, 1)` from any generator.
#[inline]
pub fn next_unit(rng: &mut impl RngCore) -> f64 {
    to_unit(rng.next_u64())
}

/// Index in `[0, n)`.
#[inline]
pub fn next_index(rng: &mut impl RngCore, n: usize) -> usize {
    ((next_unit(rng) * n as f64) as usize).min(n - 1)
}

/// Inverse-CDF draw from an (unnormalized is fine) nonnegative weight vector.
///
/// Falls back to the last positive entry when `u * total` lands past the
/// accumulated sum through rounding.
pub fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}
