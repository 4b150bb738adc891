//! Inter-chain step-size adaptation and the sizing rules for the number of
//! chains and iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::numerics::{chi_square_quantile, student_t_quantile};

/// Log step size `ψ = log h` and the number of completed updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub psi: f64,
    pub iteration: u64,
}

impl AdaptationState {
    pub fn new(step_size: f64) -> Self {
        Self {
            psi: step_size.ln(),
            iteration: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.psi.exp()
    }
}

/// `ψ' = ψ + (ᾱ − ᾱ*) / √(t + 1)`.
pub fn update_log_step_size(
    state: AdaptationState,
    mean_acceptance: f64,
    target_acceptance: f64,
) -> AdaptationState {
    let gain = 1.0 / ((state.iteration + 1) as f64).sqrt();
    AdaptationState {
        psi: state.psi + gain * (mean_acceptance - target_acceptance),
        iteration: state.iteration + 1,
    }
}

/// Asymptotically optimal acceptance rate for each kernel.
pub fn target_acceptance(kind: KernelKind) -> f64 {
    match kind {
        KernelKind::Rwmh => 0.234,
        KernelKind::Mala => 0.574,
        KernelKind::Barker => 0.4,
        KernelKind::Hmc { .. } => 0.651,
    }
}

/// Initial step size `2.4² / d^γ` with `γ` = 1, 1/3, 1/3, 1/4 for
/// RWMH, MALA, Barker and HMC.
pub fn initial_step_size(kind: KernelKind, d: usize) -> f64 {
    let d = d.max(1) as f64;
    let scale = 2.4 * 2.4;
    match kind {
        KernelKind::Rwmh => scale / d,
        KernelKind::Mala | KernelKind::Barker => scale / d.cbrt(),
        KernelKind::Hmc { .. } => scale / d.powf(0.25),
    }
}

/// Tolerances that fix the number of chains and iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingPolicy {
    /// Half-width tolerance for the relative (sd-normalized) mean error.
    pub delta_mean: f64,
    /// Tolerance on the log10 width of the variance-ratio interval.
    pub delta_var: f64,
    pub alpha: f64,
    /// Iteration multiplier in `T = ⌊c d^γ⌋`.
    pub c: f64,
}

impl Default for SizingPolicy {
    fn default() -> Self {
        Self {
            delta_mean: 0.1,
            delta_var: 0.15,
            alpha: 0.05,
            c: 50.0,
        }
    }
}

impl SizingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (0, 1)", self.alpha)));
        }
        for (name, v) in [
            ("delta_mean", self.delta_mean),
            ("delta_var", self.delta_var),
            ("c", self.c),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

const MAX_CHAINS: usize = 1 << 40;

// Smallest n >= 2 satisfying a criterion that is monotone in n.
fn smallest_satisfying(mut ok: impl FnMut(usize) -> Result<bool>) -> Result<usize> {
    if ok(2)? {
        return Ok(2);
    }
    let mut lo = 2;
    let mut hi = 4;
    while !ok(hi)? {
        lo = hi;
        hi *= 2;
        if hi > MAX_CHAINS {
            return Err(Error::domain("tolerances require an unreasonable number of chains"));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `min{n : t_{n-1}(1 - α/2) / √n ≤ δ_mean}`.
pub fn chains_for_mean(alpha: f64, delta_mean: f64) -> Result<usize> {
    if delta_mean.is_infinite() {
        return Ok(2);
    }
    smallest_satisfying(|n| {
        Ok(student_t_quantile(1.0 - alpha / 2.0, n - 1)? / (n as f64).sqrt() <= delta_mean)
    })
}

/// `min{n : log10(χ²_{n-1}(1 - α/2) / χ²_{n-1}(α/2)) ≤ δ_var}`.
pub fn chains_for_variance(alpha: f64, delta_var: f64) -> Result<usize> {
    if delta_var.is_infinite() {
        return Ok(2);
    }
    smallest_satisfying(|n| {
        let upper = chi_square_quantile(1.0 - alpha / 2.0, n - 1)?;
        let lower = chi_square_quantile(alpha / 2.0, n - 1)?;
        Ok((upper / lower).log10() <= delta_var)
    })
}

/// Number of chains `N = max(N_mean, N_variance)`.
pub fn chain_count(policy: &SizingPolicy) -> Result<usize> {
    policy.validate()?;
    Ok(chains_for_mean(policy.alpha, policy.delta_mean)?
        .max(chains_for_variance(policy.alpha, policy.delta_var)?))
}

/// Number of iterations: `⌊c d^{1/3}⌋`, or `⌊c d^{1/4} / L⌋` for HMC, at least 1.
pub fn iteration_count(kind: KernelKind, d: usize, policy: &SizingPolicy) -> usize {
    let d = d.max(1) as f64;
    let raw = match kind {
        KernelKind::Hmc { leapfrog_steps } => policy.c * d.powf(0.25) / leapfrog_steps.max(1) as f64,
        _ => policy.c * d.cbrt(),
    };
    // Guard exact cube roots (e.g. 27^{1/3}) against rounding just below an integer.
    let t = (raw + 1e-9 * raw.abs().max(1.0)).floor();
    (t as usize).max(1)
}
