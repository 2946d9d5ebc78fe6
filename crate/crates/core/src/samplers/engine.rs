use std::time::Instant;

use rayon::prelude::*;

use super::law::{apply_law, mdlm_law, remdm_law, sedd_law, StepOutcome};
use super::schedule::{sigma_max, NoiseSchedule};
use super::{Family, RemaskStrategy, SamplerConfig, SamplerError, UnmaskRule};
use crate::kernel::{sample_ar, sample_ar_sharpened, OracleChain};
use crate::posterior::{LogMatrix, MaskedSequence, Smoother};
use crate::rng::{inverse_cdf, Domain, StepRng};

/// Per-step diagnostics of one sampled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Mask count after `k` reverse steps, `k = 0..=S`: the first entry is
    /// the state at time `S`, the last the state at time 0.
    pub mask_counts: Vec<usize>,
    /// Positions revealed on each step, in execution order.
    pub revealed: Vec<usize>,
    /// Positions remasked on each step, in execution order.
    pub remasked: Vec<usize>,
    pub final_sequence: Vec<u32>,
    /// States after every step, when requested.
    pub history: Option<Vec<MaskedSequence>>,
}

impl TrajectoryRecord {
    /// Mask count at diffusion time index `t`.
    pub fn mask_count_at(&self, t: usize) -> usize {
        self.mask_counts[self.mask_counts.len() - 1 - t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub records: Vec<TrajectoryRecord>,
    pub wall_time_s: f64,
}

impl SampleBatch {
    pub fn sequences(&self) -> Vec<Vec<u32>> {
        self.records.iter().map(|r| r.final_sequence.clone()).collect()
    }

    pub fn into_sequences(self) -> Vec<Vec<u32>> {
        self.records.into_iter().map(|r| r.final_sequence).collect()
    }
}

/// Draws `count` sequences of length `len` with the configured sampler.
/// Sequence `n` depends only on `(config, n)`, never on thread scheduling.
pub fn sample(chain: &OracleChain, config: &SamplerConfig, len: usize, count: usize) -> Result<SampleBatch, SamplerError> {
    config.validate_for(chain.vocab_size(), len)?;
    if len == 0 || count == 0 {
        return Err(SamplerError::Config("sequence length and count must be positive".into()));
    }
    let start = Instant::now();
    let records = if config.family == Family::Ar {
        let seqs = if config.beta == 1.0 {
            sample_ar(chain, len, count, config.seed)?
        } else {
            sample_ar_sharpened(chain, config.beta, len, count, config.seed)?
        };
        seqs.into_iter()
            .map(|s| TrajectoryRecord {
                mask_counts: Vec::new(),
                revealed: Vec::new(),
                remasked: Vec::new(),
                final_sequence: s,
                history: None,
            })
            .collect()
    } else {
        (0..count)
            .into_par_iter()
            .map_init(Smoother::new, |smoother, n| run_trajectory(chain, config, len, n, smoother, false))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(SampleBatch {
        records,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn expect_family(config: &SamplerConfig, ok: &[Family]) -> Result<(), SamplerError> {
    if ok.contains(&config.family) {
        Ok(())
    } else {
        Err(SamplerError::Config(format!("family {} not valid here", config.family)))
    }
}

pub fn sedd_sample(chain: &OracleChain, config: &SamplerConfig, len: usize, count: usize) -> Result<SampleBatch, SamplerError> {
    expect_family(config, &[Family::Sedd])?;
    sample(chain, config, len, count)
}

pub fn mdlm_sample(chain: &OracleChain, config: &SamplerConfig, len: usize, count: usize) -> Result<SampleBatch, SamplerError> {
    expect_family(config, &[Family::Mdlm])?;
    sample(chain, config, len, count)
}

pub fn llada_sample(chain: &OracleChain, config: &SamplerConfig, len: usize, count: usize) -> Result<SampleBatch, SamplerError> {
    expect_family(config, &[Family::Llada])?;
    sample(chain, config, len, count)
}

pub fn remdm_sample(chain: &OracleChain, config: &SamplerConfig, len: usize, count: usize) -> Result<SampleBatch, SamplerError> {
    expect_family(config, &[Family::RemdmConf, Family::RemdmLoop])?;
    sample(chain, config, len, count)
}

/// Runs the reverse process for sequence index `n`.
pub fn run_trajectory(
    chain: &OracleChain,
    config: &SamplerConfig,
    len: usize,
    n: usize,
    smoother: &mut Smoother,
    keep_history: bool,
) -> Result<TrajectoryRecord, SamplerError> {
    let schedule = config.schedule();
    let steps = schedule.steps();
    let fixed = config.prompt.len();
    let mut z = MaskedSequence::fully_masked(len);
    for (u, &tok) in config.prompt.iter().enumerate() {
        z.reveal(u, tok);
    }
    // confidence of each token when it was decoded (ReMDM-conf)
    let mut confidence = vec![0.0; len];
    let mut sigma = vec![0.0; len];
    let mut rec = TrajectoryRecord {
        mask_counts: Vec::with_capacity(steps + 1),
        revealed: Vec::with_capacity(steps),
        remasked: Vec::with_capacity(steps),
        final_sequence: Vec::new(),
        history: keep_history.then(Vec::new),
    };
    let mut masked = z.masked_count();
    rec.mask_counts.push(masked);

    for t in (1..=steps).rev() {
        let remask_active = match config.family {
            Family::RemdmLoop => loop_sigma(config, &schedule, t) > 0.0,
            Family::RemdmConf => conf_sigma(config, &schedule, t) > 0.0,
            _ => false,
        };
        let outcome = if masked == 0 && !remask_active {
            StepOutcome::default()
        } else {
            let gamma = smoother.smooth(chain, &z)?;
            let mut rng = StepRng::new(config.seed, Domain::Diffusion, n as u64, t as u64);
            let out = match config.family {
                Family::Mdlm => match config.unmask_rule {
                    UnmaskRule::Bernoulli => {
                        let law = mdlm_law(&z, fixed, gamma, &schedule, t);
                        apply_law(&mut z, &law, &mut rng)
                    }
                    UnmaskRule::FixedCount => fixed_count_step(&mut z, fixed, gamma, t, &mut rng),
                },
                Family::Sedd => {
                    let law = sedd_law(&z, fixed, gamma, &schedule, t, config.beta);
                    apply_law(&mut z, &law, &mut rng)
                }
                Family::Llada => llada_step(&mut z, fixed, gamma, t, config.remask_strategy, &mut rng),
                Family::RemdmLoop => {
                    let s = loop_sigma(config, &schedule, t);
                    sigma.fill(s);
                    let law = remdm_law(&z, fixed, gamma, &schedule, t, &sigma, config.nucleus_p)?;
                    apply_law(&mut z, &law, &mut rng)
                }
                Family::RemdmConf => {
                    conf_rates(&z, fixed, &confidence, conf_sigma(config, &schedule, t), &mut sigma);
                    let law = remdm_law(&z, fixed, gamma, &schedule, t, &sigma, config.nucleus_p)?;
                    apply_law(&mut z, &law, &mut rng)
                }
                Family::Ar => unreachable!("autoregressive sampling has no reverse process"),
            };
            for &(u, tok) in &out.revealed {
                confidence[u] = gamma.get(u, tok as usize).exp();
            }
            out
        };
        masked = masked + outcome.remasked - outcome.revealed.len();
        debug_assert_eq!(masked, z.masked_count());
        rec.mask_counts.push(masked);
        rec.revealed.push(outcome.revealed.len());
        rec.remasked.push(outcome.remasked);
        if let Some(h) = rec.history.as_mut() {
            h.push(z.clone());
        }
    }
    rec.final_sequence = z.into_complete().ok_or(SamplerError::Unresolved { sequence: n, masked })?;
    Ok(rec)
}

/// Loop schedule: `min(eta_cap, sigma_max)` while `t / S` lies in
/// `(t_off, t_on]`, zero elsewhere.
fn loop_sigma(config: &SamplerConfig, schedule: &NoiseSchedule, t: usize) -> f64 {
    let time = schedule.time(t);
    if time > config.t_off && time <= config.t_on {
        let (a_s, a_t) = schedule.step_alphas(t);
        config.eta_cap.min(sigma_max(a_s, a_t))
    } else {
        0.0
    }
}

/// Step-level budget of the confidence schedule, active at every step.
fn conf_sigma(config: &SamplerConfig, schedule: &NoiseSchedule, t: usize) -> f64 {
    let (a_s, a_t) = schedule.step_alphas(t);
    config.eta_cap.min(sigma_max(a_s, a_t))
}

/// Spreads `sigma_t` over decoded positions with weights
/// `softmax(-confidence)`; masked and prompt positions get zero.
fn conf_rates(z: &MaskedSequence, fixed: usize, confidence: &[f64], sigma_t: f64, out: &mut [f64]) {
    out.fill(0.0);
    if sigma_t == 0.0 {
        return;
    }
    let mut total = 0.0;
    for u in fixed..z.len() {
        if !z.is_masked(u) {
            out[u] = (-confidence[u]).exp();
            total += out[u];
        }
    }
    if total > 0.0 {
        for x in out.iter_mut() {
            *x = *x / total * sigma_t;
        }
    }
}

fn reveal_count(masked: usize, t: usize) -> usize {
    masked.div_ceil(t)
}

/// Reveals exactly `ceil(masked / t)` uniformly chosen masked positions.
fn fixed_count_step(z: &mut MaskedSequence, fixed: usize, gamma: &LogMatrix, t: usize, rng: &mut StepRng) -> StepOutcome {
    let mut cand: Vec<(f64, usize, f64)> = (fixed..z.len())
        .filter(|&u| z.is_masked(u))
        .map(|u| {
            let [u0, u1] = rng.uniforms(u);
            (u0, u, u1)
        })
        .collect();
    let m = reveal_count(cand.len(), t);
    cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = StepOutcome::default();
    let mut row = vec![0.0; gamma.cols()];
    for &(_, u, u1) in &cand[..m] {
        for (p, &l) in row.iter_mut().zip(gamma.row(u)) {
            *p = l.exp();
        }
        let tok = inverse_cdf(&row, u1) as u32;
        z.reveal(u, tok);
        out.revealed.push((u, tok));
    }
    out.revealed.sort_unstable();
    out
}

/// Draws a candidate at every masked position and keeps `ceil(masked / t)`
/// of them, the rest stay masked.
fn llada_step(
    z: &mut MaskedSequence,
    fixed: usize,
    gamma: &LogMatrix,
    t: usize,
    strategy: RemaskStrategy,
    rng: &mut StepRng,
) -> StepOutcome {
    let mut row = vec![0.0; gamma.cols()];
    // (sort key, position, token); smaller key is kept first
    let mut cand: Vec<(f64, usize, u32)> = Vec::new();
    for u in fixed..z.len() {
        if !z.is_masked(u) {
            continue;
        }
        let [u0, u1] = rng.uniforms(u);
        for (p, &l) in row.iter_mut().zip(gamma.row(u)) {
            *p = l.exp();
        }
        let tok = inverse_cdf(&row, u1);
        let key = match strategy {
            RemaskStrategy::LowConfidence => -row[tok],
            RemaskStrategy::Random => u0,
        };
        cand.push((key, u, tok as u32));
    }
    let m = reveal_count(cand.len(), t);
    cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = StepOutcome::default();
    for &(_, u, tok) in &cand[..m] {
        z.reveal(u, tok);
        out.revealed.push((u, tok));
    }
    out.revealed.sort_unstable();
    out
}
