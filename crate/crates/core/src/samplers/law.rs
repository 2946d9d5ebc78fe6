//! Per-step categorical parameters of the factorized samplers.
//!
//! A step law fixes, for every position, either the probability of being
//! revealed together with the token distribution to draw from, or the
//! probability of being remasked. MDLM, SEDD and ReMDM differ only in how
//! they fill these fields, which is what makes their reduction identities
//! checkable by plain equality.

use super::filters::{nucleus_in_place, tempered_in_place};
use super::schedule::{sigma_max, unmask_probability, NoiseSchedule};
use super::SamplerError;
use crate::posterior::{LogMatrix, MaskedSequence};
use crate::rng::{inverse_cdf, StepRng};

#[derive(Debug, Clone, PartialEq)]
pub enum SiteLaw {
    /// Prompt position; never changes.
    Fixed,
    Masked { unmask_prob: f64, dist: Vec<f64> },
    Unmasked { remask_prob: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLaw {
    pub sites: Vec<SiteLaw>,
}

/// Changes made by one applied step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// `(position, token)` for every newly revealed position.
    pub revealed: Vec<(usize, u32)>,
    pub remasked: usize,
}

fn posterior_row(gamma: &LogMatrix, u: usize) -> Vec<f64> {
    gamma.row(u).iter().map(|x| x.exp()).collect()
}

/// Plain absorbing reverse step: masked positions reveal with
/// `(alpha_s - alpha_t) / (1 - alpha_t)` and draw from `gamma`.
pub fn mdlm_law(z: &MaskedSequence, fixed: usize, gamma: &LogMatrix, schedule: &NoiseSchedule, t: usize) -> StepLaw {
    let (a_s, a_t) = schedule.step_alphas(t);
    let p = unmask_probability(a_s, a_t, 0.0);
    build(z, fixed, |u| SiteLaw::Masked {
        unmask_prob: p,
        dist: posterior_row(gamma, u),
    })
}

/// Tau-leaping step with tempered scores: the jump target is drawn from
/// `gamma^beta`, renormalized.
pub fn sedd_law(
    z: &MaskedSequence,
    fixed: usize,
    gamma: &LogMatrix,
    schedule: &NoiseSchedule,
    t: usize,
    beta: f64,
) -> StepLaw {
    let (a_s, a_t) = schedule.step_alphas(t);
    let p = unmask_probability(a_s, a_t, 0.0);
    build(z, fixed, |u| {
        let mut dist = posterior_row(gamma, u);
        tempered_in_place(&mut dist, beta);
        SiteLaw::Masked { unmask_prob: p, dist }
    })
}

/// Remasking step with per-position rates `sigma[u]`. Fails if any rate
/// exceeds the validity bound of the step.
pub fn remdm_law(
    z: &MaskedSequence,
    fixed: usize,
    gamma: &LogMatrix,
    schedule: &NoiseSchedule,
    t: usize,
    sigma: &[f64],
    nucleus_p: f64,
) -> Result<StepLaw, SamplerError> {
    let (a_s, a_t) = schedule.step_alphas(t);
    let bound = sigma_max(a_s, a_t);
    if let Some(u) = sigma.iter().position(|&s| !(0.0..=bound).contains(&s)) {
        return Err(SamplerError::Config(format!(
            "remasking rate {} at position {u} outside [0, {bound}] at step {t}",
            sigma[u]
        )));
    }
    let mut order = Vec::new();
    let mut law = StepLaw {
        sites: Vec::with_capacity(z.len()),
    };
    for u in 0..z.len() {
        law.sites.push(if u < fixed {
            SiteLaw::Fixed
        } else if z.is_masked(u) {
            let mut dist = posterior_row(gamma, u);
            nucleus_in_place(&mut dist, nucleus_p, &mut order);
            let unmask_prob = unmask_probability(a_s, a_t, sigma[u]);
            debug_assert!((0.0..=1.0 + 1e-12).contains(&unmask_prob));
            SiteLaw::Masked { unmask_prob, dist }
        } else {
            SiteLaw::Unmasked { remask_prob: sigma[u] }
        });
    }
    Ok(law)
}

fn build(z: &MaskedSequence, fixed: usize, mut masked: impl FnMut(usize) -> SiteLaw) -> StepLaw {
    let sites = (0..z.len())
        .map(|u| {
            if u < fixed {
                SiteLaw::Fixed
            } else if z.is_masked(u) {
                masked(u)
            } else {
                SiteLaw::Unmasked { remask_prob: 0.0 }
            }
        })
        .collect();
    StepLaw { sites }
}

/// Samples the next state. Position `u` uses its own pair of uniforms:
/// the first decides reveal/remask, the second picks the token.
pub fn apply_law(z: &mut MaskedSequence, law: &StepLaw, rng: &mut StepRng) -> StepOutcome {
    let mut out = StepOutcome::default();
    for (u, site) in law.sites.iter().enumerate() {
        match site {
            SiteLaw::Fixed => {}
            SiteLaw::Masked { unmask_prob, dist } => {
                let [u0, u1] = rng.uniforms(u);
                if u0 < *unmask_prob {
                    let tok = inverse_cdf(dist, u1) as u32;
                    z.reveal(u, tok);
                    out.revealed.push((u, tok));
                }
            }
            SiteLaw::Unmasked { remask_prob } => {
                if *remask_prob > 0.0 {
                    let [u0, _] = rng.uniforms(u);
                    if u0 < *remask_prob {
                        z.mask(u);
                        out.remasked += 1;
                    }
                }
            }
        }
    }
    out
}

/// One ReMDM transition: builds the law and samples from it.
#[allow(clippy::too_many_arguments)]
pub fn remdm_step(
    z: &mut MaskedSequence,
    fixed: usize,
    gamma: &LogMatrix,
    schedule: &NoiseSchedule,
    t: usize,
    sigma: &[f64],
    nucleus_p: f64,
    rng: &mut StepRng,
) -> Result<StepOutcome, SamplerError> {
    let law = remdm_law(z, fixed, gamma, schedule, t, sigma, nucleus_p)?;
    Ok(apply_law(z, &law, rng))
}
