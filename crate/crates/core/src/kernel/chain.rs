use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KernelError, TransitionKernel, NORMALIZATION_TOL};
use crate::rng::{instance_rng, next_unit, Domain, StepRng};

/// Default stationarity tolerance used when an oracle is constructed.
pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Kernel together with the initial distribution of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleChain {
    kernel: TransitionKernel,
    pi0: Vec<f64>,
    #[serde(skip)]
    log_pi0: Vec<f64>,
    #[serde(skip)]
    pi0_cum: Vec<f64>,
}

impl OracleChain {
    /// Chain started from the stationary distribution of `kernel`.
    pub fn new(kernel: TransitionKernel) -> Result<Self, KernelError> {
        let st = stationary(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITERS)?;
        Ok(Self::assemble(kernel, st.pi))
    }

    /// Chain with an explicit initial distribution (not required to be
    /// stationary).
    pub fn with_initial(kernel: TransitionKernel, pi0: Vec<f64>) -> Result<Self, KernelError> {
        if pi0.len() != kernel.vocab_size() {
            return Err(KernelError::VocabMismatch {
                expected: kernel.vocab_size(),
                found: pi0.len(),
            });
        }
        if pi0.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(KernelError::InvalidInitial("negative or non-finite entry".into()));
        }
        let s: f64 = pi0.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(KernelError::InvalidInitial(format!("sums to {s}")));
        }
        Ok(Self::assemble(kernel, pi0))
    }

    fn assemble(kernel: TransitionKernel, pi0: Vec<f64>) -> Self {
        let log_pi0 = pi0.iter().map(|p| p.ln()).collect();
        let mut acc = 0.0;
        let pi0_cum = pi0
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            kernel,
            pi0,
            log_pi0,
            pi0_cum,
        }
    }

    /// Rebuilds derived fields after deserialization.
    pub fn refresh(self) -> Self {
        Self::assemble(self.kernel, self.pi0)
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn vocab_size(&self) -> usize {
        self.kernel.vocab_size()
    }

    pub fn pi0(&self) -> &[f64] {
        &self.pi0
    }

    pub fn log_pi0(&self) -> &[f64] {
        &self.log_pi0
    }

    /// `|| pi0^T P' - pi0^T ||_1`.
    pub fn stationarity_residual(&self) -> f64 {
        let next = apply_kernel(&self.kernel, &self.pi0);
        l1(&next, &self.pi0)
    }

    /// `log p0(x)` of a clean sequence.
    pub fn log_prob(&self, seq: &[u32]) -> f64 {
        let Some((&first, rest)) = seq.split_first() else {
            return 0.0;
        };
        let mut lp = self.log_pi0[first as usize];
        let mut prev = first as usize;
        for &x in rest {
            lp += self.kernel.prob(prev, x as usize).ln();
            prev = x as usize;
        }
        lp
    }

    fn sample_initial(&self, u: f64) -> u32 {
        let v = self.pi0_cum.len();
        let i = self.pi0_cum.partition_point(|&c| c <= u * self.pi0_cum[v - 1]);
        i.min(v - 1) as u32
    }
}

/// Result of power iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `pi^T P'` using the sparse part plus the rank-1 teleport term, O(nnz + V).
fn apply_kernel(kernel: &TransitionKernel, pi: &[f64]) -> Vec<f64> {
    let eps = kernel.epsilon();
    let mass: f64 = pi.iter().sum();
    let mut next: Vec<f64> = kernel.nu().iter().map(|&n| eps * mass * n).collect();
    for (i, &p) in pi.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let w = (1.0 - eps) * p;
        let (ids, ps) = kernel.sparse_row(i);
        for (&j, &q) in ids.iter().zip(ps) {
            next[j as usize] += w * q;
        }
    }
    next
}

/// Power iteration from the uniform distribution.
pub fn stationary(kernel: &TransitionKernel, tol: f64, max_iters: usize) -> Result<Stationary, KernelError> {
    let v = kernel.vocab_size();
    stationary_from(kernel, vec![1.0 / v as f64; v], tol, max_iters)
}

/// Power iteration from `init`; stops once `|| pi P' - pi ||_1 < tol`.
pub fn stationary_from(
    kernel: &TransitionKernel,
    init: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Stationary, KernelError> {
    if !(tol > 0.0) {
        return Err(KernelError::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    if init.len() != kernel.vocab_size() {
        return Err(KernelError::VocabMismatch {
            expected: kernel.vocab_size(),
            found: init.len(),
        });
    }
    let mut pi = init;
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let mut next = apply_kernel(kernel, &pi);
        residual = l1(&next, &pi);
        if residual < tol {
            return Ok(Stationary {
                pi,
                residual,
                iterations: it,
            });
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        pi = next;
    }
    Err(KernelError::NotConverged {
        iterations: max_iters,
        residual,
    })
}

/// Agreement of power iteration across distinct initializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub initializations: usize,
    pub max_pairwise_l1: f64,
    pub max_residual: f64,
    pub max_row_sum_error: f64,
}

impl SanityReport {
    pub fn passed(&self) -> bool {
        self.max_pairwise_l1 < 1e-8 && self.max_row_sum_error < NORMALIZATION_TOL
    }
}

/// Runs power iteration from uniform, `nu`, two point masses and a random
/// distribution, and checks row normalization.
pub fn stationary_sanity(kernel: &TransitionKernel, tol: f64, max_iters: usize) -> Result<SanityReport, KernelError> {
    let v = kernel.vocab_size();
    let mut inits = vec![vec![1.0 / v as f64; v], kernel.nu().to_vec()];
    let mut first = vec![0.0; v];
    first[0] = 1.0;
    inits.push(first);
    let mut last = vec![0.0; v];
    last[v - 1] = 1.0;
    inits.push(last);
    let mut rng = instance_rng(0x5eed, 0);
    inits.push((0..v).map(|_| next_unit(&mut rng) + 1e-3).collect());

    let sols = inits
        .into_iter()
        .map(|init| stationary_from(kernel, init, tol, max_iters))
        .collect::<Result<Vec<_>, _>>()?;
    let mut max_pairwise_l1: f64 = 0.0;
    for a in 0..sols.len() {
        for b in a + 1..sols.len() {
            max_pairwise_l1 = max_pairwise_l1.max(l1(&sols[a].pi, &sols[b].pi));
        }
    }
    let max_residual = sols.iter().map(|s| s.residual).fold(0.0, f64::max);
    let max_row_sum_error = (0..v)
        .map(|i| (kernel.effective_row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(SanityReport {
        initializations: sols.len(),
        max_pairwise_l1,
        max_residual,
        max_row_sum_error,
    })
}

fn check_shape(len: usize, count: usize) -> Result<(), KernelError> {
    if len == 0 || count == 0 {
        return Err(KernelError::InvalidParameter(format!(
            "sequence length {len} and count {count} must be positive"
        )));
    }
    Ok(())
}

/// Ancestral sampling: `x_1 ~ pi0`, `x_{u+1} ~ P'(.|x_u)`. Sequence `n` uses
/// its own random stream, so results do not depend on parallelism.
pub fn sample_ar(chain: &OracleChain, len: usize, count: usize, seed: u64) -> Result<Vec<Vec<u32>>, KernelError> {
    check_shape(len, count)?;
    let kernel = chain.kernel();
    Ok((0..count)
        .into_par_iter()
        .map(|n| {
            let mut rng = StepRng::new(seed, Domain::Autoregressive, n as u64, 0);
            let mut seq = Vec::with_capacity(len);
            let [_, u] = rng.uniforms(0);
            let mut x = chain.sample_initial(u);
            seq.push(x);
            for pos in 1..len {
                let [ub, ut] = rng.uniforms(pos);
                x = kernel.sample_successor(x as usize, ub, ut);
                seq.push(x);
            }
            seq
        })
        .collect())
}

/// Cumulative tempered rows `P'(.|i)^beta / Z`.
enum TemperedRows {
    Table(Vec<Vec<f64>>),
    OnTheFly,
}

fn tempered_cdf(kernel: &TransitionKernel, from: usize, beta: f64) -> Vec<f64> {
    let row = kernel.effective_row(from);
    let mut w: Vec<f64> = if beta.is_infinite() {
        let (arg, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
        let mut w = vec![0.0; row.len()];
        w[arg] = 1.0;
        w
    } else {
        // powers of the max-shifted row avoid underflow for large beta
        let m = row.iter().copied().fold(0.0, f64::max);
        row.iter().map(|&p| (p / m).powf(beta)).collect()
    };
    let mut acc = 0.0;
    for x in w.iter_mut() {
        acc += *x;
        *x = acc;
    }
    w
}

fn draw_cdf(cdf: &[f64], u: f64) -> u32 {
    let total = cdf[cdf.len() - 1];
    let i = cdf.partition_point(|&c| c <= u * total);
    // skip zero-width entries at the end (beta = inf)
    let mut i = i.min(cdf.len() - 1);
    while i > 0 && cdf[i] == cdf[i - 1] {
        i -= 1;
    }
    i as u32
}

/// Ancestral sampling with every conditional replaced by the renormalized
/// `beta`-power of `P'(.|x_u)`. `beta = 1` reproduces [`sample_ar`] exactly;
/// `beta = inf` is the greedy path.
pub fn sample_ar_sharpened(
    chain: &OracleChain,
    beta: f64,
    len: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>, KernelError> {
    if !(beta > 0.0) {
        return Err(KernelError::InvalidParameter(format!("beta {beta} must be positive")));
    }
    if beta == 1.0 {
        return sample_ar(chain, len, count, seed);
    }
    check_shape(len, count)?;
    let kernel = chain.kernel();
    let v = kernel.vocab_size();
    let table = if v * v <= 1 << 22 {
        TemperedRows::Table((0..v).map(|i| tempered_cdf(kernel, i, beta)).collect())
    } else {
        TemperedRows::OnTheFly
    };
    Ok((0..count)
        .into_par_iter()
        .map(|n| {
            let mut rng = StepRng::new(seed, Domain::Autoregressive, n as u64, 0);
            let mut seq = Vec::with_capacity(len);
            let [_, u] = rng.uniforms(0);
            let mut x = chain.sample_initial(u);
            seq.push(x);
            for pos in 1..len {
                let [_, ut] = rng.uniforms(pos);
                x = match &table {
                    TemperedRows::Table(t) => draw_cdf(&t[x as usize], ut),
                    TemperedRows::OnTheFly => draw_cdf(&tempered_cdf(kernel, x as usize, beta), ut),
                };
                seq.push(x);
            }
            seq
        })
        .collect())
}
