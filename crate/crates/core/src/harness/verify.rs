//! Self-checks runnable from the command line against the built-in
//! reference implementations.

use serde::Serialize;

use crate::kernel::{OracleChain, TransitionKernel};
use crate::metrics::evaluate;
use crate::posterior::{brute_force_posterior, reference, MaskedSequence, Smoother, MASK};
use crate::rng::{instance_rng, next_index, next_unit};
use crate::samplers::{mdlm_law, remdm_law, sample, sedd_law, tempered_scores, Family, NoiseSchedule, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random chain with `k` successors per row drawn without replacement.
pub fn random_chain(seed: u64, index: u64, v: usize, k: usize, eps: f64) -> OracleChain {
    let mut rng = instance_rng(seed, index);
    let rows = (0..v)
        .map(|_| {
            let mut ids: Vec<u32> = (0..v as u32).collect();
            for a in 0..k {
                let b = a + next_index(&mut rng, v - a);
                ids.swap(a, b);
            }
            let mut row: Vec<(u32, f64)> = ids[..k].iter().map(|&j| (j, next_unit(&mut rng) + 0.05)).collect();
            row.sort_unstable_by_key(|e| e.0);
            let s: f64 = row.iter().map(|e| e.1).sum();
            row.into_iter().map(|(j, w)| (j, w / s)).collect()
        })
        .collect();
    let nu: Vec<f64> = (0..v).map(|_| next_unit(&mut rng) + 0.05).collect();
    let s: f64 = nu.iter().sum();
    let kernel = TransitionKernel::new(rows, eps, nu.into_iter().map(|x| x / s).collect()).expect("valid kernel");
    OracleChain::new(kernel).expect("stationary")
}

/// Random evidence; pattern 0 is fully masked and 1 fully revealed.
pub fn random_evidence(seed: u64, index: u64, v: usize, len: usize, pattern: usize) -> MaskedSequence {
    let mut rng = instance_rng(seed ^ 0xe71d, index);
    let tokens = (0..len)
        .map(|_| {
            let tok = next_index(&mut rng, v) as u32;
            match pattern {
                0 => MASK,
                1 => tok,
                _ if next_unit(&mut rng) < 0.5 => MASK,
                _ => tok,
            }
        })
        .collect();
    MaskedSequence::new(tokens, v).expect("valid tokens")
}

fn posterior_exactness(seed: u64) -> VerifyResult {
    let mut worst: f64 = 0.0;
    let mut smoother = Smoother::new();
    for n in 0..200u64 {
        let v = 3 + (n % 3) as usize;
        let len = 4 + (n / 3 % 3) as usize;
        let eps = if n % 2 == 0 { 0.01 } else { 0.1 };
        let chain = random_chain(seed, n, v, 2, eps);
        let z = random_evidence(seed, n, v, len, (n % 5) as usize);
        let fast = smoother.smooth(&chain, &z).expect("smooth").clone();
        let brute = brute_force_posterior(&chain, &z).expect("enumerate");
        worst = worst.max(fast.max_abs_diff(&brute.log_gamma));
    }
    VerifyResult {
        name: "posterior matches enumeration",
        passed: worst < 1e-9,
        detail: format!("200 instances, max |log gamma diff| = {worst:.3e}"),
    }
}

fn sparse_equals_dense(seed: u64) -> VerifyResult {
    let mut worst: f64 = 0.0;
    for n in 0..50u64 {
        let chain = random_chain(seed ^ 0xd5, n, 32, 8, 0.05);
        let z = random_evidence(seed ^ 0xd5, n, 32, 24, 2 + (n % 3) as usize);
        let mut s = Smoother::new();
        s.smooth(&chain, &z).expect("smooth");
        let fast = s.into_lattice();
        let dense = reference::forward_backward(&chain, &z).expect("dense");
        worst = worst
            .max(fast.log_alpha.max_abs_diff(&dense.log_alpha))
            .max(fast.log_gamma.max_abs_diff(&dense.log_gamma))
            .max((fast.log_evidence() - dense.log_evidence()).abs());
    }
    VerifyResult {
        name: "sparse forward-backward equals dense",
        passed: worst < 1e-9,
        detail: format!("50 instances V=32 K=8, max deviation = {worst:.3e}"),
    }
}

fn metric_identity(seed: u64) -> VerifyResult {
    let chain = random_chain(seed ^ 0x1d, 0, 16, 4, 0.01);
    let mut worst: f64 = 0.0;
    for family in [Family::Ar, Family::Mdlm, Family::Llada] {
        let cfg = SamplerConfig::new(family, 8, seed);
        let seqs = sample(&chain, &cfg, 32, 16).expect("sample").into_sequences();
        let m = evaluate(&seqs, &chain).expect("evaluate");
        worst = worst.max(m.identity_residual());
    }
    VerifyResult {
        name: "nll = kl + entropy",
        passed: worst < 1e-9,
        detail: format!("max residual = {worst:.3e}"),
    }
}

fn reduction_identities(seed: u64) -> VerifyResult {
    let mut ok = true;
    for n in 0..20u64 {
        let chain = random_chain(seed ^ 0x2e, n, 5, 3, 0.1);
        let z = random_evidence(seed ^ 0x2e, n, 5, 8, 2);
        let gamma = Smoother::new().smooth(&chain, &z).expect("smooth").clone();
        let sch = NoiseSchedule::linear(6);
        for t in 1..=6 {
            let a = mdlm_law(&z, 0, &gamma, &sch, t);
            ok &= a == sedd_law(&z, 0, &gamma, &sch, t, 1.0);
            ok &= remdm_law(&z, 0, &gamma, &sch, t, &[0.0; 8], 1.0).map_or(false, |b| a == b);
        }
        let row: Vec<f64> = gamma.row(0).iter().map(|x| x.exp()).collect();
        ok &= tempered_scores(&row, 1.0) == row;
    }
    VerifyResult {
        name: "reduction identities",
        passed: ok,
        detail: "ReMDM(sigma=0, p=1) and SEDD(beta=1) laws equal MDLM; beta=1 tempering is the identity".into(),
    }
}

pub fn run_all(seed: u64) -> Vec<VerifyResult> {
    vec![
        posterior_exactness(seed),
        sparse_equals_dense(seed),
        metric_identity(seed),
        reduction_identities(seed),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_all(11) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
