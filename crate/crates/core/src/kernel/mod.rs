//! Ground-truth sparse Markov chain with a rank-1 teleport mixture.
//!
//! The effective kernel is `P'(j|i) = (1 - eps) * P_topK(j|i) + eps * nu(j)`.
//! Only the sparse part is stored; the teleport term is applied
//! analytically wherever a row is needed.

mod chain;
mod counts;
pub mod io;
mod sparsify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{
    sample_ar, sample_ar_sharpened, stationary, stationary_from, stationary_sanity, OracleChain,
    SanityReport, Stationary, STATIONARY_MAX_ITERS, STATIONARY_TOL,
};
pub use counts::{count_bigrams, BigramCounter, BigramCounts};
pub use sparsify::{effective_support, nearest_rank, sparsify, Sparsified};

/// Row sums and probability vectors must match 1 to this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("token id {id} at position {position} is out of range for vocabulary size {vocab_size}")]
    TokenOutOfRange { position: u64, id: u32, vocab_size: usize },
    #[error("vocabulary size mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("count table has no transitions")]
    EmptyCounts,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("teleport distribution has a zero entry at {index}; enable add-one smoothing")]
    ZeroTeleport { index: usize },
    #[error("invalid teleport distribution: {0}")]
    InvalidTeleport(String),
    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("initial distribution invalid: {0}")]
    InvalidInitial(String),
}

/// How the teleport weights passed to [`build_kernel`] are turned into `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NuSmoothing {
    /// Weights are normalized as given; zeros are rejected.
    #[default]
    None,
    /// Weights are read as counts and incremented by one before normalizing.
    AddOne,
}

/// Sparse top-K kernel plus teleport distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct TransitionKernel {
    vocab_size: usize,
    k: usize,
    epsilon: f64,
    nu: Vec<f64>,
    offsets: Vec<usize>,
    succ: Vec<u32>,
    prob: Vec<f64>,
    // derived
    log_nu: Vec<f64>,
    row_cum: Vec<f64>,
    nu_cum: Vec<f64>,
    col_offsets: Vec<usize>,
    col_src: Vec<u32>,
    col_prob: Vec<f64>,
}

/// Serialized form: the stored fields only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelRepr {
    pub vocab_size: usize,
    pub k: usize,
    pub epsilon: f64,
    pub rows: Vec<Vec<(u32, f64)>>,
    pub nu: Vec<f64>,
}

impl TryFrom<KernelRepr> for TransitionKernel {
    type Error = KernelError;

    fn try_from(r: KernelRepr) -> Result<Self, KernelError> {
        let kernel = TransitionKernel::new(r.rows, r.epsilon, r.nu)?;
        if kernel.vocab_size != r.vocab_size {
            return Err(KernelError::VocabMismatch {
                expected: r.vocab_size,
                found: kernel.vocab_size,
            });
        }
        Ok(kernel.with_k(r.k))
    }
}

impl From<TransitionKernel> for KernelRepr {
    fn from(k: TransitionKernel) -> Self {
        KernelRepr {
            vocab_size: k.vocab_size,
            k: k.k,
            epsilon: k.epsilon,
            rows: (0..k.vocab_size).map(|i| k.row_pairs(i)).collect(),
            nu: k.nu,
        }
    }
}

/// Rescales to unit sum unless already normalized within tolerance, so
/// serialized kernels load bit-for-bit.
fn normalize_vec(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() <= NORMALIZATION_TOL {
        return;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

impl TransitionKernel {
    /// Builds a kernel from sparse rows (one per state, any order), a
    /// teleport weight `epsilon in [0, 1)` and a strictly positive `nu`.
    ///
    /// Rows and `nu` are renormalized. `epsilon = 0` is accepted for
    /// degenerate test chains but gives up strict positivity.
    pub fn new(rows: Vec<Vec<(u32, f64)>>, epsilon: f64, nu: Vec<f64>) -> Result<Self, KernelError> {
        let v = rows.len();
        if v == 0 {
            return Err(KernelError::InvalidParameter("empty vocabulary".into()));
        }
        if v > u32::MAX as usize {
            return Err(KernelError::InvalidParameter("vocabulary too large".into()));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(KernelError::InvalidParameter(format!(
                "teleport weight {epsilon} not in [0, 1)"
            )));
        }
        let mut nu = nu;
        if nu.len() != v {
            return Err(KernelError::VocabMismatch {
                expected: v,
                found: nu.len(),
            });
        }
        if let Some(bad) = nu.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(KernelError::InvalidTeleport(format!("entry {bad}")));
        }
        if let Some(index) = nu.iter().position(|&x| x == 0.0) {
            return Err(KernelError::ZeroTeleport { index });
        }
        normalize_vec(&mut nu);

        let mut offsets = Vec::with_capacity(v + 1);
        let mut succ = Vec::new();
        let mut prob = Vec::new();
        offsets.push(0);
        let mut k = 0;
        for (i, mut row) in rows.into_iter().enumerate() {
            if row.is_empty() {
                return Err(KernelError::InvalidRow {
                    row: i,
                    reason: "no successors".into(),
                });
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(KernelError::InvalidRow {
                    row: i,
                    reason: "duplicate successor".into(),
                });
            }
            let mut sum = 0.0;
            for &(j, p) in &row {
                if j as usize >= v {
                    return Err(KernelError::InvalidRow {
                        row: i,
                        reason: format!("successor {j} out of range"),
                    });
                }
                if !(p.is_finite() && p > 0.0) {
                    return Err(KernelError::InvalidRow {
                        row: i,
                        reason: format!("probability {p} is not positive"),
                    });
                }
                sum += p;
            }
            k = k.max(row.len());
            let scale = if (sum - 1.0).abs() <= NORMALIZATION_TOL { 1.0 } else { sum };
            for (j, p) in row {
                succ.push(j);
                prob.push(p / scale);
            }
            offsets.push(succ.len());
        }
        Ok(Self::assemble(v, k, epsilon, nu, offsets, succ, prob))
    }

    fn assemble(
        vocab_size: usize,
        k: usize,
        epsilon: f64,
        nu: Vec<f64>,
        offsets: Vec<usize>,
        succ: Vec<u32>,
        prob: Vec<f64>,
    ) -> Self {
        let log_nu = nu.iter().map(|x| x.ln()).collect();
        let mut row_cum = Vec::with_capacity(prob.len());
        for i in 0..vocab_size {
            let mut acc = 0.0;
            for &p in &prob[offsets[i]..offsets[i + 1]] {
                acc += p;
                row_cum.push(acc);
            }
        }
        let mut nu_cum = Vec::with_capacity(vocab_size);
        let mut acc = 0.0;
        for &x in &nu {
            acc += x;
            nu_cum.push(acc);
        }
        // transpose to column-major
        let mut col_counts = vec![0usize; vocab_size + 1];
        for &j in &succ {
            col_counts[j as usize + 1] += 1;
        }
        for j in 0..vocab_size {
            col_counts[j + 1] += col_counts[j];
        }
        let col_offsets = col_counts.clone();
        let mut fill = col_counts;
        let mut col_src = vec![0u32; succ.len()];
        let mut col_prob = vec![0.0; succ.len()];
        for i in 0..vocab_size {
            for e in offsets[i]..offsets[i + 1] {
                let j = succ[e] as usize;
                col_src[fill[j]] = i as u32;
                col_prob[fill[j]] = prob[e];
                fill[j] += 1;
            }
        }
        Self {
            vocab_size,
            k,
            epsilon,
            nu,
            offsets,
            succ,
            prob,
            log_nu,
            row_cum,
            nu_cum,
            col_offsets,
            col_src,
            col_prob,
        }
    }

    /// Overrides the recorded global sparsity level (must cover every row).
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k.max(self.k);
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Global sparsity level `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn log_nu(&self) -> &[f64] {
        &self.log_nu
    }

    /// Number of stored sparse edges.
    pub fn nnz(&self) -> usize {
        self.succ.len()
    }

    /// Successor ids (ascending) and sparse probabilities of `state`.
    #[inline]
    pub fn sparse_row(&self, state: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[state]..self.offsets[state + 1];
        (&self.succ[r.clone()], &self.prob[r])
    }

    /// Predecessor ids (ascending) and sparse probabilities into `state`.
    #[inline]
    pub fn sparse_column(&self, state: usize) -> (&[u32], &[f64]) {
        let r = self.col_offsets[state]..self.col_offsets[state + 1];
        (&self.col_src[r.clone()], &self.col_prob[r])
    }

    pub fn row_pairs(&self, state: usize) -> Vec<(u32, f64)> {
        let (ids, ps) = self.sparse_row(state);
        ids.iter().copied().zip(ps.iter().copied()).collect()
    }

    /// `P_topK(to|from)`, zero off the sparse support.
    pub fn sparse_prob(&self, from: usize, to: usize) -> f64 {
        let (ids, ps) = self.sparse_row(from);
        match ids.binary_search(&(to as u32)) {
            Ok(e) => ps[e],
            Err(_) => 0.0,
        }
    }

    /// Whether `to` is in the stored top-K support of `from`.
    pub fn in_support(&self, from: usize, to: usize) -> bool {
        self.sparse_row(from).0.binary_search(&(to as u32)).is_ok()
    }

    /// Effective probability `P'(to|from)` in O(log K).
    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        (1.0 - self.epsilon) * self.sparse_prob(from, to) + self.epsilon * self.nu[to]
    }

    /// Materialized effective row of length `V`.
    pub fn effective_row(&self, from: usize) -> Vec<f64> {
        let mut row: Vec<f64> = self.nu.iter().map(|&x| self.epsilon * x).collect();
        let (ids, ps) = self.sparse_row(from);
        for (&j, &p) in ids.iter().zip(ps) {
            row[j as usize] += (1.0 - self.epsilon) * p;
        }
        row
    }

    /// Lower bound on every effective transition probability.
    pub fn min_prob_bound(&self) -> f64 {
        self.epsilon * self.nu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Draws a successor of `from`: the teleport branch with probability
    /// `eps` (decided by `u_branch`), otherwise the sparse row; `u_token`
    /// selects within the chosen branch by binary search on its CDF.
    #[inline]
    pub fn sample_successor(&self, from: usize, u_branch: f64, u_token: f64) -> u32 {
        if u_branch < self.epsilon {
            let i = self.nu_cum.partition_point(|&c| c <= u_token * self.nu_cum[self.vocab_size - 1]);
            return i.min(self.vocab_size - 1) as u32;
        }
        let r = self.offsets[from]..self.offsets[from + 1];
        let cum = &self.row_cum[r.clone()];
        let e = cum.partition_point(|&c| c <= u_token * cum[cum.len() - 1]);
        self.succ[r.start + e.min(cum.len() - 1)]
    }

    /// Draws from `nu` by inverse CDF.
    pub fn sample_nu(&self, u: f64) -> u32 {
        let i = self.nu_cum.partition_point(|&c| c <= u * self.nu_cum[self.vocab_size - 1]);
        i.min(self.vocab_size - 1) as u32
    }
}

/// Assembles the effective kernel from truncated rows and teleport weights.
pub fn build_kernel(
    rows: Vec<Vec<(u32, f64)>>,
    epsilon: f64,
    nu: &[f64],
    smoothing: NuSmoothing,
) -> Result<TransitionKernel, KernelError> {
    let nu = match smoothing {
        NuSmoothing::None => nu.to_vec(),
        NuSmoothing::AddOne => nu.iter().map(|&c| c + 1.0).collect(),
    };
    TransitionKernel::new(rows, epsilon, nu)
}

/// Empirical unigram distribution with add-one smoothing over `V`.
pub fn smoothed_unigram(counts: &BigramCounts) -> Vec<f64> {
    let v = counts.vocab_size() as f64;
    let total = counts.total_tokens() as f64;
    counts
        .unigram()
        .iter()
        .map(|&c| (c as f64 + 1.0) / (total + v))
        .collect()
}
