use crate::kernel::{KernelError, OracleChain, TransitionKernel};
use crate::rng::{instance_rng, next_unit};

/// Row-weight exponent; 5 puts the entropy rate near 2.4 nats, the range of
/// character-level English.
const SKEW: i32 = 5;

/// Dense 27-state chain with skewed random rows, a stand-in for a
/// character-level oracle when no corpus is at hand.
pub fn surrogate_char_chain(seed: u64, epsilon: f64) -> Result<OracleChain, KernelError> {
    const V: usize = 27;
    let mut rng = instance_rng(seed, 0);
    let rows = (0..V)
        .map(|_| {
            let w: Vec<f64> = (0..V).map(|_| next_unit(&mut rng).powi(SKEW) + 1e-9).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().enumerate().map(|(j, x)| (j as u32, x / s)).collect()
        })
        .collect();
    let kernel = TransitionKernel::new(rows, epsilon, vec![1.0 / V as f64; V])?;
    OracleChain::new(kernel)
}
