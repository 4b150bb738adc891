//! Orchestration of a full diagnostic run: drawing the initial ensemble,
//! advancing the jointly adapted chains, and assembling the report.

use std::f64::consts::LN_10;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    chain_count, initial_step_size, iteration_count, target_acceptance, update_log_step_size,
    AdaptationState, SizingPolicy,
};
use crate::diagnostics::{
    error_lower_bound, log_variance_ratio_ci, mean_difference_ci, quantile_ci_ranks,
    quantile_difference_ci, reliability_check, scalar_functional_diagnostics, FunctionalTag,
    LowerBoundResult, ConfidenceInterval, ReliabilityResult, TrajectoryPoint, RELIABILITY_CUTOFF,
};
use crate::error::{Error, Result};
use crate::kernels::{mh_step, ChainState, KernelKind, Preconditioner};
use crate::models::{Approximation, TargetModel, REFERENCE_DRAWS};
use crate::numerics::{
    pearson_correlation_squared, sample_quantile, summary_stats, RandomStream, SampleMatrix,
};

/// Stream index reserved for draws that do not belong to any chain.
pub const SHARED_STREAM: u64 = u64::MAX;

/// A scalar summary `f(x)` evaluated on every chain state.
#[derive(Clone)]
pub enum ScalarFunctional {
    /// The target's log density.
    LogDensity,
    /// `‖x‖²`.
    SquaredNorm,
    Custom {
        name: String,
        f: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    },
}

impl ScalarFunctional {
    pub fn custom(name: impl Into<String>, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFunctional::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ScalarFunctional::LogDensity => "log_density",
            ScalarFunctional::SquaredNorm => "squared_norm",
            ScalarFunctional::Custom { name, .. } => name,
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>, target: &TargetModel) -> f64 {
        match self {
            ScalarFunctional::LogDensity => target.log_density(x),
            ScalarFunctional::SquaredNorm => x.norm_squared(),
            ScalarFunctional::Custom { f, .. } => f(x),
        }
    }
}

impl fmt::Debug for ScalarFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFunctional({})", self.name())
    }
}

/// Functionals requested for a run. The `All*` forms expand to every
/// coordinate of the target.
#[derive(Debug, Clone)]
pub enum FunctionalSpec {
    Mean(usize),
    Variance(usize),
    Quantile { coordinate: usize, p: f64 },
    AllMeans,
    AllVariances,
    AllQuantiles(f64),
    Scalar(ScalarFunctional),
}

/// Where the initial-side functionals come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSide {
    /// The approximation's own mean, sd and quantiles.
    #[default]
    Approximation,
    /// Sample statistics of the initial draws `X⁽⁰⁾`.
    InitialDraws,
}

/// How the initial-side functionals were actually obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSideSource {
    /// Closed form, or the defining sample of an empirical approximation.
    Exact,
    /// Monte Carlo estimates from a sampler-only approximation.
    MonteCarloReference,
    InitialDraws,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: KernelKind,
    /// Level of every confidence interval.
    pub alpha: f64,
    pub sizing: SizingPolicy,
    pub functionals: Vec<FunctionalSpec>,
    pub seed: u64,
    /// Checkpoint spacing for traced runs; 0 disables traces.
    pub trace_every: usize,
    pub chains: Option<usize>,
    pub iterations: Option<usize>,
    /// Multiplier on the initial step size.
    pub step_size_scale: f64,
    pub reliability_cutoff: f64,
    pub initial_side: InitialSide,
    /// Update chains on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl RunConfig {
    pub fn new(kernel: KernelKind, seed: u64) -> Self {
        Self {
            kernel,
            alpha: 0.05,
            sizing: SizingPolicy::default(),
            functionals: vec![FunctionalSpec::AllMeans, FunctionalSpec::AllVariances],
            seed,
            trace_every: 0,
            chains: None,
            iterations: None,
            step_size_scale: 1.0,
            reliability_cutoff: RELIABILITY_CUTOFF,
            initial_side: InitialSide::Approximation,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.sizing.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (0, 1)", self.alpha)));
        }
        if self.functionals.is_empty() {
            return Err(Error::Config("no functionals requested".into()));
        }
        if self.chains == Some(0) || self.iterations == Some(0) {
            return Err(Error::Config("chain and iteration overrides must be positive".into()));
        }
        if !(self.step_size_scale > 0.0 && self.step_size_scale.is_finite()) {
            return Err(Error::Config(format!(
                "step_size_scale = {} must be positive and finite",
                self.step_size_scale
            )));
        }
        if !(self.reliability_cutoff > 0.0 && self.reliability_cutoff <= 1.0) {
            return Err(Error::Config(format!(
                "reliability cutoff {} not in (0, 1]",
                self.reliability_cutoff
            )));
        }
        Ok(())
    }

    /// `N` from the override or the sizing rule.
    pub fn resolved_chains(&self) -> Result<usize> {
        match self.chains {
            Some(n) => Ok(n),
            None => chain_count(&self.sizing),
        }
    }

    /// `T` from the override or the sizing rule.
    pub fn resolved_iterations(&self, d: usize) -> usize {
        self.iterations
            .unwrap_or_else(|| iteration_count(self.kernel, d, &self.sizing))
    }
}

/// The `N` chains of a run with their shared adaptation state.
#[derive(Debug, Clone)]
pub struct ChainEnsemble {
    kernel: KernelKind,
    chains: Vec<Chain>,
    initial: SampleMatrix,
    adaptation: AdaptationState,
    target_acceptance: f64,
    acceptance_history: Vec<f64>,
    preconditioner: Preconditioner,
    gradient_evaluations: u64,
}

#[derive(Debug, Clone)]
struct Chain {
    state: ChainState,
    stream: RandomStream,
}

impl ChainEnsemble {
    /// Draws `X⁽⁰⁾` with chain `j` on stream `(seed, stream_indices[j])`.
    pub fn initialize(
        kernel: KernelKind,
        step_size: f64,
        seed: u64,
        stream_indices: &[u64],
        target: &TargetModel,
        approximation: &Approximation,
    ) -> Result<Self> {
        if target.dim() != approximation.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: approximation.dim(),
            });
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::domain(format!("step size {step_size} must be positive")));
        }
        let preconditioner = Preconditioner::new(approximation.covariance().clone())?;
        let chains: Vec<Chain> = stream_indices
            .iter()
            .map(|&index| {
                let mut stream = RandomStream::new(seed, index);
                let position = approximation.sample(&mut stream);
                let mut state = ChainState::new(position, target);
                if state.log_density.is_nan() {
                    state.log_density = f64::NEG_INFINITY;
                }
                Chain { state, stream }
            })
            .collect();
        let bad = chains.iter().filter(|c| !c.state.log_density.is_finite()).count();
        if 2 * bad > chains.len() {
            return Err(Error::Initialization {
                bad,
                total: chains.len(),
            });
        }
        let rows: Vec<DVector<f64>> = chains.iter().map(|c| c.state.position.clone()).collect();
        let initial = SampleMatrix::from_rows(&rows)?;
        Ok(Self {
            kernel,
            chains,
            initial,
            adaptation: AdaptationState::new(step_size),
            target_acceptance: target_acceptance(kernel),
            acceptance_history: Vec::new(),
            preconditioner,
            gradient_evaluations: 0,
        })
    }

    /// One transition of every chain followed by the shared step-size update.
    pub fn advance(&mut self, target: &TargetModel, parallel: bool) {
        let h = self.adaptation.step_size();
        let kernel = self.kernel;
        let precond = &self.preconditioner;
        let step = |chain: &mut Chain| {
            let out = mh_step(kernel, &chain.state, h, precond, target, &mut chain.stream);
            chain.state = out.state;
            (out.acceptance_probability, out.gradient_evaluations)
        };
        let results: Vec<(f64, u64)> = if parallel {
            self.chains.par_iter_mut().map(step).collect()
        } else {
            self.chains.iter_mut().map(step).collect()
        };
        let mut probs: Vec<f64> = results.iter().map(|r| r.0).collect();
        probs.sort_by(f64::total_cmp);
        let mean_acceptance = probs.iter().sum::<f64>() / probs.len() as f64;
        self.gradient_evaluations += results.iter().map(|r| r.1).sum::<u64>();
        self.acceptance_history.push(mean_acceptance);
        self.adaptation = update_log_step_size(self.adaptation, mean_acceptance, self.target_acceptance);
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn iterations_completed(&self) -> usize {
        self.acceptance_history.len()
    }

    /// Current states `X⁽ᵗ⁾`, one row per chain.
    pub fn states(&self) -> SampleMatrix {
        let rows: Vec<DVector<f64>> = self.chains.iter().map(|c| c.state.position.clone()).collect();
        SampleMatrix::from_rows(&rows).expect("chain states stay finite")
    }

    pub fn initial(&self) -> &SampleMatrix {
        &self.initial
    }

    pub fn adaptation(&self) -> AdaptationState {
        self.adaptation
    }

    pub fn acceptance_history(&self) -> &[f64] {
        &self.acceptance_history
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.preconditioner
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.gradient_evaluations
    }
}

/// Bound on one functional with its normalized value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalResult {
    pub label: String,
    pub bound: f64,
    pub interval: ConfidenceInterval,
    pub detected: bool,
    /// Mean and quantile bounds divided by the initial sd; variance bounds
    /// as a log10 variance ratio; scalar bounds unchanged.
    pub normalized_bound: f64,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckpoint {
    pub t: usize,
    pub rho2_max: f64,
    /// Raw bounds in the order of `DiagnosticReport::functionals`.
    pub bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub target: String,
    pub kernel: KernelKind,
    pub dimension: usize,
    pub chains: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub initial_step_size: f64,
    pub final_step_size: f64,
    pub initial_side: InitialSideSource,
    pub functionals: Vec<FunctionalResult>,
    pub reliability: ReliabilityResult,
    pub acceptance_history: Vec<f64>,
    pub gradient_evaluations: u64,
    pub caveats: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<TraceCheckpoint>>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl DiagnosticReport {
    pub fn functional(&self, label: &str) -> Option<&FunctionalResult> {
        self.functionals.iter().find(|f| f.label == label)
    }

    /// Results whose tag is a per-coordinate mean, in coordinate order.
    pub fn means(&self) -> Vec<&FunctionalResult> {
        self.select(|t| matches!(t, FunctionalTag::Mean { .. }))
    }

    pub fn log_variances(&self) -> Vec<&FunctionalResult> {
        self.select(|t| matches!(t, FunctionalTag::LogVariance { .. }))
    }

    fn select(&self, keep: impl Fn(&FunctionalTag) -> bool) -> Vec<&FunctionalResult> {
        self.functionals.iter().filter(|f| keep(&f.interval.tag)).collect()
    }
}

const CONDITION_CAVEAT: &str = "Each bound assumes the chains move the functional monotonically \
     toward its value under the target; this cannot be verified without the target's true functionals.";

enum Resolved {
    Mean { i: usize, reference: f64, scale: f64 },
    LogVariance { i: usize, reference_sd: f64 },
    Quantile { i: usize, p: f64, reference: f64, scale: f64 },
    Scalar { functional: ScalarFunctional, initial_values: Vec<f64> },
}

fn expand(specs: &[FunctionalSpec], d: usize) -> Result<Vec<FunctionalSpec>> {
    let mut out = Vec::new();
    let check = |i: usize| {
        if i < d {
            Ok(())
        } else {
            Err(Error::Config(format!("coordinate {i} out of range for dimension {d}")))
        }
    };
    for spec in specs {
        match spec {
            FunctionalSpec::AllMeans => out.extend((0..d).map(FunctionalSpec::Mean)),
            FunctionalSpec::AllVariances => out.extend((0..d).map(FunctionalSpec::Variance)),
            FunctionalSpec::AllQuantiles(p) => {
                out.extend((0..d).map(|coordinate| FunctionalSpec::Quantile { coordinate, p: *p }))
            }
            FunctionalSpec::Mean(i) | FunctionalSpec::Variance(i) => {
                check(*i)?;
                out.push(spec.clone());
            }
            FunctionalSpec::Quantile { coordinate, .. } => {
                check(*coordinate)?;
                out.push(spec.clone());
            }
            FunctionalSpec::Scalar(_) => out.push(spec.clone()),
        }
    }
    Ok(out)
}

fn resolve(
    config: &RunConfig,
    specs: &[FunctionalSpec],
    ensemble: &ChainEnsemble,
    target: &TargetModel,
    approximation: &Approximation,
) -> Result<(Vec<Resolved>, InitialSideSource)> {
    let initial = ensemble.initial();
    let source = match config.initial_side {
        InitialSide::InitialDraws => InitialSideSource::InitialDraws,
        InitialSide::Approximation if approximation.has_exact_functionals() => InitialSideSource::Exact,
        InitialSide::Approximation => InitialSideSource::MonteCarloReference,
    };
    let from_draws = source == InitialSideSource::InitialDraws;
    let draw_stats = if from_draws { Some(summary_stats(initial)?) } else { None };
    let mean = |i: usize| draw_stats.as_ref().map_or(approximation.mean()[i], |s| s.mean[i]);
    let sd = |i: usize| draw_stats.as_ref().map_or(approximation.sd()[i], |s| s.sd[i]);
    let mut scalar_reference: Option<Vec<DVector<f64>>> = None;
    let mut resolved = Vec::with_capacity(specs.len());
    for spec in specs {
        resolved.push(match spec {
            FunctionalSpec::Mean(i) => Resolved::Mean {
                i: *i,
                reference: mean(*i),
                scale: sd(*i),
            },
            FunctionalSpec::Variance(i) => Resolved::LogVariance {
                i: *i,
                reference_sd: sd(*i),
            },
            FunctionalSpec::Quantile { coordinate, p } => {
                quantile_ci_ranks(ensemble.n_chains(), *p, config.alpha)?;
                let reference = if from_draws {
                    sample_quantile(initial, *p, *coordinate)?
                } else {
                    approximation.quantile(*coordinate, *p)?
                };
                Resolved::Quantile {
                    i: *coordinate,
                    p: *p,
                    reference,
                    scale: sd(*coordinate),
                }
            }
            FunctionalSpec::Scalar(functional) => {
                let initial_values = if from_draws {
                    (0..initial.n_samples())
                        .map(|j| functional.evaluate(&initial.row(j), target))
                        .collect()
                } else {
                    let draws = scalar_reference.get_or_insert_with(|| {
                        let mut stream = RandomStream::new(config.seed, SHARED_STREAM);
                        (0..REFERENCE_DRAWS).map(|_| approximation.sample(&mut stream)).collect()
                    });
                    draws.iter().map(|x| functional.evaluate(x, target)).collect()
                };
                Resolved::Scalar {
                    functional: functional.clone(),
                    initial_values,
                }
            }
            _ => unreachable!("functional specs are expanded before resolution"),
        });
    }
    Ok((resolved, source))
}

fn relative(result: LowerBoundResult, scale: f64, units: &str) -> FunctionalResult {
    let normalized_bound = if scale > 0.0 { result.bound / scale } else { result.bound };
    package(result, normalized_bound, units)
}

fn package(result: LowerBoundResult, normalized_bound: f64, units: &str) -> FunctionalResult {
    FunctionalResult {
        label: result.interval.tag.to_string(),
        bound: result.bound,
        interval: result.interval,
        detected: result.detected,
        normalized_bound,
        units: units.to_string(),
    }
}

fn evaluate(
    functionals: &[Resolved],
    states: &SampleMatrix,
    alpha: f64,
    target: &TargetModel,
) -> Result<Vec<FunctionalResult>> {
    let mut out = Vec::new();
    for f in functionals {
        match f {
            Resolved::Mean { i, reference, scale } => {
                let ci = mean_difference_ci(states, *i, *reference, alpha)?;
                out.push(relative(error_lower_bound(&ci), *scale, "sd_relative"));
            }
            Resolved::LogVariance { i, reference_sd } => {
                let ci = log_variance_ratio_ci(states, *i, *reference_sd, alpha)?;
                let result = error_lower_bound(&ci);
                let normalized = result.bound / LN_10;
                out.push(package(result, normalized, "log10_variance_ratio"));
            }
            Resolved::Quantile { i, p, reference, scale } => {
                let ci = quantile_difference_ci(states, *i, *p, *reference, alpha)?;
                out.push(relative(error_lower_bound(&ci), *scale, "sd_relative"));
            }
            Resolved::Scalar {
                functional,
                initial_values,
            } => {
                let values: Vec<f64> = (0..states.n_samples())
                    .map(|j| functional.evaluate(&states.row(j), target))
                    .collect();
                let (mean, median) =
                    scalar_functional_diagnostics(functional.name(), initial_values, &values, alpha)?;
                let mean_bound = mean.bound;
                let median_bound = median.bound;
                out.push(package(mean, mean_bound, "raw"));
                out.push(package(median, median_bound, "raw"));
            }
        }
    }
    Ok(out)
}

fn at_iteration(t: usize, err: Error) -> Error {
    match err {
        Error::Runtime { module, message } => Error::Runtime {
            module,
            message: format!("at iteration {t}: {message}"),
        },
        other => Error::Runtime {
            module: "diagnostics",
            message: format!("at iteration {t}: {other}"),
        },
    }
}

/// Runs the diagnostic without traces.
pub fn run_taddaa(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
) -> Result<DiagnosticReport> {
    run(config, target, approximation, None, false)
}

/// Runs the diagnostic and records bounds and `ρ²_max` every
/// `config.trace_every` iterations, at `t = 0` and at `t = T`.
pub fn run_with_traces(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
) -> Result<DiagnosticReport> {
    if config.trace_every == 0 {
        return Err(Error::Config("traced runs need trace_every >= 1".into()));
    }
    run(config, target, approximation, None, true)
}

/// Runs the diagnostic with chain `j` on stream `stream_indices[j]` instead
/// of stream `j`. The number of chains is `stream_indices.len()`.
pub fn run_with_stream_indices(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
    stream_indices: &[u64],
) -> Result<DiagnosticReport> {
    run(config, target, approximation, Some(stream_indices), config.trace_every > 0)
}

/// Initializes and advances an ensemble for `T` iterations without
/// computing any diagnostics.
pub fn run_ensemble(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
    stream_indices: Option<&[u64]>,
) -> Result<ChainEnsemble> {
    config.validate()?;
    let (mut ensemble, iterations) = start(config, target, approximation, stream_indices)?;
    for _ in 0..iterations {
        ensemble.advance(target, config.parallel);
    }
    Ok(ensemble)
}

fn start(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
    stream_indices: Option<&[u64]>,
) -> Result<(ChainEnsemble, usize)> {
    let d = target.dim();
    let default_indices: Vec<u64>;
    let indices = match stream_indices {
        Some(indices) => indices,
        None => {
            default_indices = (0..config.resolved_chains()? as u64).collect();
            &default_indices
        }
    };
    if indices.len() < 3 {
        return Err(Error::TooFewSamples {
            required: 3,
            got: indices.len(),
        });
    }
    let h0 = initial_step_size(config.kernel, d) * config.step_size_scale;
    let ensemble = ChainEnsemble::initialize(config.kernel, h0, config.seed, indices, target, approximation)?;
    Ok((ensemble, config.resolved_iterations(d)))
}

fn run(
    config: &RunConfig,
    target: &TargetModel,
    approximation: &Approximation,
    stream_indices: Option<&[u64]>,
    traced: bool,
) -> Result<DiagnosticReport> {
    let clock = Instant::now();
    config.validate()?;
    let (mut ensemble, iterations) = start(config, target, approximation, stream_indices)?;
    let initial_step_size = ensemble.adaptation().step_size();
    let specs = expand(&config.functionals, target.dim())?;
    let (functionals, source) = resolve(config, &specs, &ensemble, target, approximation)?;

    let mut traces = Vec::new();
    let mut record = |ensemble: &ChainEnsemble| -> Result<()> {
        let t = ensemble.iterations_completed();
        let states = ensemble.states();
        let results = evaluate(&functionals, &states, config.alpha, target).map_err(|e| at_iteration(t, e))?;
        let rho2_max = reliability_check(ensemble.initial(), &states, config.reliability_cutoff)
            .map_err(|e| at_iteration(t, e))?
            .rho2_max;
        traces.push(TraceCheckpoint {
            t,
            rho2_max,
            bounds: results.iter().map(|r| r.bound).collect(),
        });
        Ok(())
    };

    if traced {
        record(&ensemble)?;
    }
    for t in 1..=iterations {
        ensemble.advance(target, config.parallel);
        if traced && (t % config.trace_every == 0 || t == iterations) {
            record(&ensemble)?;
        }
    }

    let states = ensemble.states();
    let results = evaluate(&functionals, &states, config.alpha, target).map_err(|e| at_iteration(iterations, e))?;
    let mut reliability = reliability_check(ensemble.initial(), &states, config.reliability_cutoff)
        .map_err(|e| at_iteration(iterations, e))?;
    let traces = traced.then_some(traces);
    if let Some(traces) = &traces {
        reliability.trajectory = Some(
            traces
                .iter()
                .map(|c| TrajectoryPoint {
                    t: c.t,
                    rho2_max: c.rho2_max,
                })
                .collect(),
        );
    }

    let mut caveats = vec![CONDITION_CAVEAT.to_string()];
    caveats.push(if reliability.passed {
        format!(
            "Reliability check passed: rho2_max = {:.4} is below the cutoff {}.",
            reliability.rho2_max, reliability.cutoff
        )
    } else {
        format!(
            "Reliability check failed: rho2_max = {:.4} is not below the cutoff {}; the chains may not have \
             moved far enough from their starting points for the bounds to be informative.",
            reliability.rho2_max, reliability.cutoff
        )
    });
    if !reliability.degenerate_coordinates.is_empty() {
        caveats.push(format!(
            "Coordinates {:?} did not vary across chains and were treated as fully correlated.",
            reliability.degenerate_coordinates
        ));
    }
    match source {
        InitialSideSource::MonteCarloReference => caveats.push(format!(
            "Initial-side functionals were estimated from {REFERENCE_DRAWS} approximation draws."
        )),
        InitialSideSource::InitialDraws => {
            caveats.push("Initial-side functionals are sample statistics of the initial chain states.".into())
        }
        InitialSideSource::Exact => {}
    }

    Ok(DiagnosticReport {
        target: target.name().to_string(),
        kernel: config.kernel,
        dimension: target.dim(),
        chains: ensemble.n_chains(),
        iterations,
        alpha: config.alpha,
        seed: config.seed,
        initial_step_size,
        final_step_size: ensemble.adaptation().step_size(),
        initial_side: source,
        functionals: results,
        reliability,
        acceptance_history: ensemble.acceptance_history().to_vec(),
        gradient_evaluations: ensemble.gradient_evaluations(),
        caveats,
        traces,
        wall_time: clock.elapsed(),
    })
}

/// Largest absolute correlation, across replications, between the
/// coordinate-averaged final states of `n_pairs` random chain pairs.
///
/// Each element of `replications` holds the final states of one independent
/// run. Pairs whose projections do not vary across replications (for
/// instance when every replication used the same seed) count as
/// correlation 1.
pub fn cross_chain_independence_check(
    replications: &[SampleMatrix],
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let first = replications
        .first()
        .ok_or(Error::TooFewSamples { required: 3, got: 0 })?;
    if replications.len() < 3 {
        return Err(Error::TooFewSamples {
            required: 3,
            got: replications.len(),
        });
    }
    let n = first.n_samples();
    if n < 10 {
        return Err(Error::TooFewSamples { required: 10, got: n });
    }
    if let Some(bad) = replications.iter().find(|r| r.n_samples() != n || r.dim() != first.dim()) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.n_samples(),
        });
    }
    let projections: Vec<Vec<f64>> = replications
        .iter()
        .map(|r| (0..n).map(|j| r.row(j).mean()).collect())
        .collect();
    let mut stream = RandomStream::new(seed, SHARED_STREAM);
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let j = stream.index(n);
        let k = (j + 1 + stream.index(n - 1)) % n;
        let a: Vec<f64> = projections.iter().map(|p| p[j]).collect();
        let b: Vec<f64> = projections.iter().map(|p| p[k]).collect();
        let r = pearson_correlation_squared(&a, &b).map_or(1.0, f64::sqrt);
        worst = worst.max(r);
    }
    Ok(worst)
}
