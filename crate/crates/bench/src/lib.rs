//! Benchmark fixtures.

use samplerlab::harness::verify::random_evidence;
use samplerlab::harness::{surrogate_char_chain, verify::random_chain};
use samplerlab::{MaskedSequence, OracleChain};

/// Dense 27-state chain, the character-level workload.
pub fn char_chain() -> OracleChain {
    surrogate_char_chain(1, 1e-4).expect("surrogate chain")
}

/// Sparse chain with `k` successors per row.
pub fn sparse_chain(v: usize, k: usize) -> OracleChain {
    random_chain(2, 0, v, k, 1e-4)
}

/// Half-masked evidence of length `len`.
pub fn half_masked(v: usize, len: usize) -> MaskedSequence {
    random_evidence(3, 0, v, len, 2)
}
