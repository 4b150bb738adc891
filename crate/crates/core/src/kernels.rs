//! Preconditioned Metropolis–Hastings kernels: random walk, MALA, Barker and
//! HMC, plus the accept/reject step shared by all four.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::RandomStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Positive-definite preconditioning matrix `G` with lower Cholesky factor
/// `C` (`C Cᵀ = G`).
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    log_det_factor: f64,
}

impl Preconditioner {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotPositiveDefinite("preconditioner is not square".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-10 * matrix.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("preconditioner is not symmetric".into()));
        }
        if matrix.diagonal().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NotPositiveDefinite(
                "preconditioner diagonal must be strictly positive".into(),
            ));
        }
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("preconditioner".into()))?
            .l();
        let log_det_factor = factor.diagonal().iter().map(|v| v.ln()).sum();
        Ok(Self {
            matrix,
            factor,
            log_det_factor,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is positive-definite")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    // Draw from N(0, G⁻¹) given standard normal `xi`.
    fn momentum_from(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.factor
            .tr_solve_lower_triangular(xi)
            .expect("Cholesky factor has a positive diagonal")
    }

    fn kinetic_energy(&self, momentum: &DVector<f64>) -> f64 {
        0.5 * self.factor.tr_mul(momentum).norm_squared()
    }

    // log N(to; from_mean, h G)
    fn gaussian_log_density(&self, to: &DVector<f64>, mean: &DVector<f64>, h: f64) -> f64 {
        let r = self.whiten(&(to - mean));
        let d = self.dim() as f64;
        -0.5 * d * (LN_2PI + h.ln()) - self.log_det_factor - 0.5 * r.norm_squared() / h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rwmh,
    Mala,
    Barker,
    Hmc { leapfrog_steps: usize },
}

/// Leapfrog steps used when HMC is requested without an explicit count.
pub const DEFAULT_LEAPFROG_STEPS: usize = 10;

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Rwmh => "rwmh",
            KernelKind::Mala => "mala",
            KernelKind::Barker => "barker",
            KernelKind::Hmc { .. } => "hmc",
        }
    }

    pub fn leapfrog_steps(&self) -> Option<usize> {
        match self {
            KernelKind::Hmc { leapfrog_steps } => Some(*leapfrog_steps),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelKind::Hmc { leapfrog_steps: 0 } => {
                Err(Error::Config("HMC needs at least one leapfrog step".into()))
            }
            _ => Ok(()),
        }
    }

    /// Parses `rwmh`, `mala`, `barker` or `hmc`, using `leapfrog_steps` for HMC.
    pub fn parse(name: &str, leapfrog_steps: usize) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "rwmh" => KernelKind::Rwmh,
            "mala" => KernelKind::Mala,
            "barker" => KernelKind::Barker,
            "hmc" => KernelKind::Hmc { leapfrog_steps },
            other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Hmc { leapfrog_steps } => write!(f, "hmc(L={leapfrog_steps})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::parse(s, DEFAULT_LEAPFROG_STEPS)
    }
}

/// The MH correction a proposal carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correction {
    /// `log q(x → y)` and `log q(y → x)`.
    Metropolis {
        forward_log_density: f64,
        reverse_log_density: f64,
    },
    /// Hamiltonian `-log π(x) + ½ηᵀGη` at the start and end of the trajectory.
    Hamiltonian { start_energy: f64, end_energy: f64 },
}

#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub proposal: DVector<f64>,
    pub correction: Correction,
    /// Log density at the proposal, when the kernel already evaluated it.
    pub proposal_log_density: Option<f64>,
    /// Gradient at the proposal, cached for the next step if accepted.
    pub proposal_gradient: Option<DVector<f64>>,
    pub gradient_evaluations: u64,
}

pub fn rwmh_propose(
    x: &DVector<f64>,
    h: f64,
    precond: &Preconditioner,
    stream: &mut RandomStream,
) -> ProposalOutcome {
    let xi = stream.standard_normal_vector(x.len());
    let proposal = x + precond.factor() * &xi * h.sqrt();
    let log_q = precond.gaussian_log_density(&proposal, x, h);
    ProposalOutcome {
        proposal,
        correction: Correction::Metropolis {
            forward_log_density: log_q,
            reverse_log_density: log_q,
        },
        proposal_log_density: None,
        proposal_gradient: None,
        gradient_evaluations: 0,
    }
}

fn langevin_mean(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    h: f64,
    precond: &Preconditioner,
) -> DVector<f64> {
    x + precond.matrix() * grad * (0.5 * h)
}

/// `log q(from → to)` for the MALA proposal `N(from + (h/2) G ∇log π(from), h G)`.
pub fn mala_transition_log_density(
    from: &DVector<f64>,
    grad_from: &DVector<f64>,
    to: &DVector<f64>,
    h: f64,
    precond: &Preconditioner,
) -> f64 {
    precond.gaussian_log_density(to, &langevin_mean(from, grad_from, h, precond), h)
}

pub fn mala_propose(
    x: &DVector<f64>,
    grad_x: &DVector<f64>,
    h: f64,
    precond: &Preconditioner,
    target: &TargetModel,
    stream: &mut RandomStream,
) -> ProposalOutcome {
    let xi = stream.standard_normal_vector(x.len());
    let proposal = langevin_mean(x, grad_x, h, precond) + precond.factor() * &xi * h.sqrt();
    let grad_y = target.grad_log_density(&proposal);
    let forward = mala_transition_log_density(x, grad_x, &proposal, h, precond);
    let reverse = mala_transition_log_density(&proposal, &grad_y, x, h, precond);
    ProposalOutcome {
        proposal,
        correction: Correction::Metropolis {
            forward_log_density: forward,
            reverse_log_density: reverse,
        },
        proposal_log_density: None,
        proposal_gradient: Some(grad_y),
        gradient_evaluations: 1,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log density of one whitened Barker increment `z` with skew `c` and
/// variance `h`: `log[2 φ_h(z) / (1 + e^{-z c})]`.
pub fn barker_increment_log_density(z: f64, c: f64, h: f64) -> f64 {
    LN_2 - 0.5 * (LN_2PI + h.ln()) - 0.5 * z * z / h - softplus(-z * c)
}

/// Probability that the Barker increment keeps the sign of the draw `w`.
pub fn barker_sign_probability(w: f64, c: f64) -> f64 {
    sigmoid(w * c)
}

/// `log q(from → from + C z)` for the Barker proposal, with `skew = Cᵀ∇log π(from)`.
fn barker_log_density(z: &DVector<f64>, skew: &DVector<f64>, h: f64, precond: &Preconditioner) -> f64 {
    z.iter()
        .zip(skew.iter())
        .map(|(zi, ci)| barker_increment_log_density(*zi, *ci, h))
        .sum::<f64>()
        - precond.log_det_factor
}

/// Barker proposal in whitened coordinates: `y = x + C z`, where each `z_i`
/// is a `N(0, h)` draw whose sign is kept with probability
/// `1 / (1 + e^{-z_i c_i})`, `c = Cᵀ∇log π(x)`.
pub fn barker_propose(
    x: &DVector<f64>,
    grad_x: &DVector<f64>,
    h: f64,
    precond: &Preconditioner,
    target: &TargetModel,
    stream: &mut RandomStream,
) -> ProposalOutcome {
    let skew_x = precond.factor().tr_mul(grad_x);
    let sqrt_h = h.sqrt();
    let z = DVector::from_fn(x.len(), |i, _| {
        let w = sqrt_h * stream.standard_normal();
        if stream.uniform() < barker_sign_probability(w, skew_x[i]) {
            w
        } else {
            -w
        }
    });
    let proposal = x + precond.factor() * &z;
    let grad_y = target.grad_log_density(&proposal);
    let skew_y = precond.factor().tr_mul(&grad_y);
    let forward = barker_log_density(&z, &skew_x, h, precond);
    let reverse = barker_log_density(&(-&z), &skew_y, h, precond);
    ProposalOutcome {
        proposal,
        correction: Correction::Metropolis {
            forward_log_density: forward,
            reverse_log_density: reverse,
        },
        proposal_log_density: None,
        proposal_gradient: Some(grad_y),
        gradient_evaluations: 1,
    }
}

/// Runs `steps` leapfrog steps of size `h` with mass matrix `G⁻¹`. Returns the
/// final position, momentum, and the number of gradient evaluations
/// (`steps + 1`).
pub fn leapfrog(
    x: &DVector<f64>,
    momentum: &DVector<f64>,
    h: f64,
    steps: usize,
    precond: &Preconditioner,
    target: &TargetModel,
) -> (DVector<f64>, DVector<f64>, u64) {
    let mut pos = x.clone();
    let mut eta = momentum.clone();
    let mut grad = target.grad_log_density(&pos);
    for _ in 0..steps {
        eta += &grad * (0.5 * h);
        pos += precond.matrix() * &eta * h;
        grad = target.grad_log_density(&pos);
        eta += &grad * (0.5 * h);
    }
    (pos, eta, steps as u64 + 1)
}

/// HMC proposal: momentum `η ~ N(0, G⁻¹)`, `steps` leapfrog steps of size `h`.
pub fn hmc_propose(
    x: &DVector<f64>,
    log_pi_x: f64,
    h: f64,
    steps: usize,
    precond: &Preconditioner,
    target: &TargetModel,
    stream: &mut RandomStream,
) -> ProposalOutcome {
    let xi = stream.standard_normal_vector(x.len());
    let eta0 = precond.momentum_from(&xi);
    let start_energy = -log_pi_x + precond.kinetic_energy(&eta0);
    let (proposal, eta, grads) = leapfrog(x, &eta0, h, steps, precond, target);
    let log_pi_y = target.log_density(&proposal);
    let end_energy = -log_pi_y + precond.kinetic_energy(&eta);
    ProposalOutcome {
        proposal,
        correction: Correction::Hamiltonian {
            start_energy,
            end_energy,
        },
        proposal_log_density: Some(log_pi_y),
        proposal_gradient: None,
        gradient_evaluations: grads,
    }
}

/// Metropolis–Hastings acceptance probability. Non-finite or NaN target or
/// proposal terms give 0.
pub fn mh_acceptance_probability(outcome: &ProposalOutcome, log_pi_x: f64, log_pi_y: f64) -> f64 {
    if log_pi_y.is_nan() || log_pi_y == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_ratio = match outcome.correction {
        Correction::Metropolis {
            forward_log_density,
            reverse_log_density,
        } => (log_pi_y + reverse_log_density) - (log_pi_x + forward_log_density),
        Correction::Hamiltonian {
            start_energy,
            end_energy,
        } => start_energy - end_energy,
    };
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Current state of one chain with its cached log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: DVector<f64>,
    pub log_density: f64,
    pub gradient: Option<DVector<f64>>,
}

impl ChainState {
    pub fn new(position: DVector<f64>, target: &TargetModel) -> Self {
        let log_density = target.log_density(&position);
        Self {
            position,
            log_density,
            gradient: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: ChainState,
    pub acceptance_probability: f64,
    pub accepted: bool,
    pub gradient_evaluations: u64,
}

/// One Metropolis–Hastings transition with step size `h`.
///
/// MALA and Barker reuse the gradient cached on `state`, so a chain costs one
/// gradient per step after its first. HMC recomputes along the whole
/// trajectory (`L + 1` gradients per step).
pub fn mh_step(
    kind: KernelKind,
    state: &ChainState,
    h: f64,
    precond: &Preconditioner,
    target: &TargetModel,
    stream: &mut RandomStream,
) -> StepOutcome {
    let mut grads = 0;
    let (outcome, current_gradient) = match kind {
        KernelKind::Rwmh => (rwmh_propose(&state.position, h, precond, stream), None),
        KernelKind::Mala | KernelKind::Barker => {
            let grad_x = match &state.gradient {
                Some(g) => g.clone(),
                None => {
                    grads += 1;
                    target.grad_log_density(&state.position)
                }
            };
            if grad_x.iter().any(|g| !g.is_finite()) {
                return StepOutcome {
                    state: ChainState {
                        gradient: Some(grad_x),
                        ..state.clone()
                    },
                    acceptance_probability: 0.0,
                    accepted: false,
                    gradient_evaluations: grads,
                };
            }
            let outcome = if kind == KernelKind::Mala {
                mala_propose(&state.position, &grad_x, h, precond, target, stream)
            } else {
                barker_propose(&state.position, &grad_x, h, precond, target, stream)
            };
            (outcome, Some(grad_x))
        }
        KernelKind::Hmc { leapfrog_steps } => (
            hmc_propose(
                &state.position,
                state.log_density,
                h,
                leapfrog_steps,
                precond,
                target,
                stream,
            ),
            None,
        ),
    };
    finish(state, current_gradient, outcome, grads, target, stream)
}

fn finish(
    state: &ChainState,
    current_gradient: Option<DVector<f64>>,
    outcome: ProposalOutcome,
    grads: u64,
    target: &TargetModel,
    stream: &mut RandomStream,
) -> StepOutcome {
    let log_pi_y = outcome
        .proposal_log_density
        .unwrap_or_else(|| target.log_density(&outcome.proposal));
    let alpha = mh_acceptance_probability(&outcome, state.log_density, log_pi_y);
    let accepted = stream.uniform() < alpha;
    let gradient_evaluations = grads + outcome.gradient_evaluations;
    let state = if accepted {
        ChainState {
            position: outcome.proposal,
            log_density: log_pi_y,
            gradient: outcome.proposal_gradient,
        }
    } else {
        ChainState {
            position: state.position.clone(),
            log_density: state.log_density,
            gradient: current_gradient,
        }
    };
    StepOutcome {
        state,
        acceptance_probability: alpha,
        accepted,
        gradient_evaluations,
    }
}
