use serde::{Deserialize, Serialize};

/// Linear survival schedule `alpha_i = 1 - i / S` on the grid `i = 0..=S`.
///
/// A reverse step goes from time `t` to `s = t - 1`, so `alpha_t < alpha_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        Self { steps }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Survival probability at grid index `i`; exactly 1 at 0 and 0 at `S`.
    #[inline]
    pub fn alpha(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        (self.steps - i) as f64 / self.steps as f64
    }

    /// `-log alpha_i`, the induced noise level.
    pub fn sigma(&self, i: usize) -> f64 {
        -self.alpha(i).ln()
    }

    /// Diffusion time `i / S` in `[0, 1]`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    /// `(alpha_s, alpha_t)` for the reverse step leaving time `t`.
    #[inline]
    pub fn step_alphas(&self, t: usize) -> (f64, f64) {
        (self.alpha(t - 1), self.alpha(t))
    }
}

/// Probability that a masked position is revealed on the step `t -> s` with
/// remasking rate `sigma`. `sigma = 0` gives the plain absorbing reverse
/// `(alpha_s - alpha_t) / (1 - alpha_t)`.
#[inline]
pub fn unmask_probability(alpha_s: f64, alpha_t: f64, sigma: f64) -> f64 {
    (alpha_s - (1.0 - sigma) * alpha_t) / (1.0 - alpha_t)
}

/// Largest remasking rate that keeps [`unmask_probability`] at most 1.
#[inline]
pub fn sigma_max(alpha_s: f64, alpha_t: f64) -> f64 {
    if alpha_t > 0.0 {
        ((1.0 - alpha_s) / alpha_t).min(1.0)
    } else {
        1.0
    }
}
