//! Target densities and the initial approximations that get diagnosed.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{
    normal_quantile, sample_covariance, sample_quantile, summary_stats, RandomStream,
    SampleMatrix,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of draws used to estimate functionals of sampler-only approximations.
pub const REFERENCE_DRAWS: usize = 100_000;

/// Log density with gradient. Implement this to plug a custom target into
/// [`TargetModel::new`].
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Log density up to an additive constant. May return `-inf`.
    fn log_density(&self, x: &DVector<f64>) -> f64;

    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64>;

    fn as_gaussian(&self) -> Option<&GaussianDensity> {
        None
    }
}

/// A target distribution plus a shared gradient-evaluation counter.
pub struct TargetModel {
    name: String,
    density: Box<dyn LogDensity>,
    gradient_evaluations: AtomicU64,
}

impl fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("gradient_evaluations", &self.gradient_evaluations())
            .finish()
    }
}

impl TargetModel {
    pub fn new(name: impl Into<String>, density: impl LogDensity + 'static) -> Self {
        Self {
            name: name.into(),
            density: Box::new(density),
            gradient_evaluations: AtomicU64::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        self.density.log_density(x)
    }

    /// Gradient of the log density; every call bumps the counter by one.
    pub fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient_evaluations.fetch_add(1, Ordering::Relaxed);
        self.density.grad_log_density(x)
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.gradient_evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_gradient_counter(&self) {
        self.gradient_evaluations.store(0, Ordering::Relaxed);
    }

    pub fn as_gaussian(&self) -> Option<&GaussianDensity> {
        self.density.as_gaussian()
    }
}

/// Multivariate normal `N(mean, covariance)`.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    // Lower Cholesky factor of the precision matrix.
    precision_factor: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("target covariance".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let precision = chol.inverse();
        let precision_factor = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("target precision".into()))?
            .l();
        Ok(Self {
            mean,
            covariance,
            precision,
            precision_factor,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = self.precision_factor.tr_mul(&(x - &self.mean));
        self.log_norm - 0.5 * r.norm_squared()
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.precision_factor.tr_mul(&(x - &self.mean));
        -(&self.precision_factor * r)
    }

    fn as_gaussian(&self) -> Option<&GaussianDensity> {
        Some(self)
    }
}

/// Gaussian with `Σ_ii = σ_i²` and `Σ_ij = ρ σ_i σ_j`.
pub fn correlated_gaussian_target(
    d: usize,
    mean: &[f64],
    variances: &[f64],
    rho: f64,
) -> Result<TargetModel> {
    if d == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    for (what, len) in [("mean", mean.len()), ("variances", variances.len())] {
        if len != d {
            return Err(Error::Config(format!("{what} has length {len}, expected {d}")));
        }
    }
    if variances.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::domain("variances must be positive"));
    }
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            variances[i]
        } else {
            rho * sd[i] * sd[j]
        }
    });
    let density = GaussianDensity::new(DVector::from_column_slice(mean), cov)?;
    Ok(TargetModel::new("gaussian_correlated", density))
}

/// Neal's funnel: `x_1 ~ N(0, 1)`, `x_i | x_1 ~ N(0, e^{x_1})` (variance) for `i >= 2`.
#[derive(Debug, Clone)]
pub struct NealFunnel {
    dim: usize,
}

impl LogDensity for NealFunnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let v = x[0];
        let inv_var = (-v).exp();
        let k = (self.dim - 1) as f64;
        let ss: f64 = x.iter().skip(1).map(|xi| xi * xi).sum();
        -0.5 * v * v - 0.5 * LN_2PI - 0.5 * k * (LN_2PI + v) - 0.5 * ss * inv_var
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = x[0];
        let inv_var = (-v).exp();
        let k = (self.dim - 1) as f64;
        let ss: f64 = x.iter().skip(1).map(|xi| xi * xi).sum();
        DVector::from_fn(self.dim, |i, _| {
            if i == 0 {
                -v - 0.5 * k + 0.5 * ss * inv_var
            } else {
                -x[i] * inv_var
            }
        })
    }
}

pub fn neal_funnel_target(d: usize) -> Result<TargetModel> {
    if d < 2 {
        return Err(Error::domain("funnel dimension must be at least 2"));
    }
    Ok(TargetModel::new("neal_funnel", NealFunnel { dim: d }))
}

/// Bayesian logistic regression posterior on a synthetic data set.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    prior_sd: f64,
}

impl LogisticRegression {
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    /// Data log likelihood `Σ_n log Bern(y_n | logit⁻¹(βᵀz_n))`.
    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.features * beta;
        eta.iter()
            .zip(self.labels.iter())
            .map(|(e, y)| y * e - softplus(*e))
            .sum()
    }

    fn log_prior(&self, beta: &DVector<f64>) -> f64 {
        let d = beta.len() as f64;
        let s2 = self.prior_sd * self.prior_sd;
        -0.5 * d * (LN_2PI + s2.ln()) - 0.5 * beta.norm_squared() / s2
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

impl LogDensity for LogisticRegression {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        self.log_likelihood(x) + self.log_prior(x)
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        let eta = &self.features * x;
        let resid = DVector::from_fn(eta.len(), |n, _| self.labels[n] - sigmoid(eta[n]));
        self.features.tr_mul(&resid) - x / (self.prior_sd * self.prior_sd)
    }
}

/// Logistic regression with `z_n ~ N(0, I)` features and labels drawn from
/// the model at `β ~ N(0, prior_sd² I)`, all from `seed`.
pub fn synthetic_logistic_regression_target(
    n_obs: usize,
    d: usize,
    prior_sd: f64,
    seed: u64,
) -> Result<TargetModel> {
    if n_obs == 0 || d == 0 {
        return Err(Error::domain("n_obs and d must be positive"));
    }
    if !(prior_sd > 0.0) {
        return Err(Error::domain("prior_sd must be positive"));
    }
    let mut rng = RandomStream::new(seed, 0);
    let features = DMatrix::from_fn(n_obs, d, |_, _| rng.standard_normal());
    let beta = rng.standard_normal_vector(d) * prior_sd;
    let eta = &features * &beta;
    let labels = DVector::from_fn(n_obs, |n, _| {
        if rng.uniform() < sigmoid(eta[n]) {
            1.0
        } else {
            0.0
        }
    });
    Ok(TargetModel::new(
        "logistic_synthetic",
        LogisticRegression {
            features,
            labels,
            prior_sd,
        },
    ))
}

/// Wraps a pair of closures as a [`LogDensity`].
pub struct FnDensity<F, G> {
    dim: usize,
    log_density: F,
    gradient: G,
}

impl<F, G> FnDensity<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, log_density: F, gradient: G) -> Self {
        Self {
            dim,
            log_density,
            gradient,
        }
    }
}

impl<F, G> LogDensity for FnDensity<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        (self.log_density)(x)
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

pub type SamplerFn = Arc<dyn Fn(&mut RandomStream) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
enum Family {
    MeanFieldGaussian,
    Empirical {
        rows: Vec<DVector<f64>>,
        samples: SampleMatrix,
    },
    Sampler {
        sampler: SamplerFn,
        reference: SampleMatrix,
    },
}

/// The initial distribution the diagnostic starts its chains from, along
/// with the functionals it is compared against.
#[derive(Clone)]
pub struct Approximation {
    mean: DVector<f64>,
    sd: DVector<f64>,
    covariance: DMatrix<f64>,
    family: Family,
}

impl fmt::Debug for Approximation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.family {
            Family::MeanFieldGaussian => "mean_field_gaussian",
            Family::Empirical { .. } => "empirical",
            Family::Sampler { .. } => "sampler",
        };
        f.debug_struct("Approximation")
            .field("family", &family)
            .field("mean", &self.mean.as_slice())
            .field("sd", &self.sd.as_slice())
            .finish()
    }
}

impl Approximation {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sd(&self) -> &DVector<f64> {
        &self.sd
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Whether mean, sd and quantiles are the approximation's own functionals
    /// (closed form or its defining sample) rather than Monte Carlo estimates.
    pub fn has_exact_functionals(&self) -> bool {
        !matches!(self.family, Family::Sampler { .. })
    }

    pub fn sample(&self, stream: &mut RandomStream) -> DVector<f64> {
        match &self.family {
            Family::MeanFieldGaussian => {
                let z = stream.standard_normal_vector(self.dim());
                self.mean.clone() + self.sd.component_mul(&z)
            }
            Family::Empirical { rows, .. } => rows[stream.index(rows.len())].clone(),
            Family::Sampler { sampler, .. } => sampler(stream),
        }
    }

    /// Marginal `p`-quantile of coordinate `i`.
    pub fn quantile(&self, i: usize, p: f64) -> Result<f64> {
        if i >= self.dim() {
            return Err(Error::domain(format!("coordinate {i} out of range")));
        }
        match &self.family {
            Family::MeanFieldGaussian => Ok(self.mean[i] + self.sd[i] * normal_quantile(p)?),
            Family::Empirical { samples, .. } => sample_quantile(samples, p, i),
            Family::Sampler { reference, .. } => sample_quantile(reference, p, i),
        }
    }

    /// Approximation defined only by a sampler; functionals are estimated
    /// from [`REFERENCE_DRAWS`] draws on stream `(seed, 0)`.
    pub fn from_sampler(dim: usize, sampler: SamplerFn, seed: u64) -> Result<Self> {
        let mut stream = RandomStream::new(seed, 0);
        let rows: Vec<DVector<f64>> = (0..REFERENCE_DRAWS).map(|_| sampler(&mut stream)).collect();
        let reference = SampleMatrix::from_rows(&rows)?;
        if reference.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: reference.dim(),
            });
        }
        let base = empirical_approximation(&reference)?;
        Ok(Self {
            family: Family::Sampler { sampler, reference },
            ..base
        })
    }
}

pub fn mean_field_gaussian_approximation(means: &[f64], sds: &[f64]) -> Result<Approximation> {
    if means.len() != sds.len() {
        return Err(Error::DimensionMismatch {
            expected: means.len(),
            got: sds.len(),
        });
    }
    if means.is_empty() {
        return Err(Error::domain("approximation dimension must be positive"));
    }
    if let Some(bad) = sds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::domain(format!("standard deviation {bad} is not positive")));
    }
    let sd = DVector::from_column_slice(sds);
    Ok(Approximation {
        mean: DVector::from_column_slice(means),
        covariance: DMatrix::from_diagonal(&sd.component_mul(&sd)),
        sd,
        family: Family::MeanFieldGaussian,
    })
}

/// The mean-field Gaussian minimizing `KL(q ‖ π)` for a Gaussian target:
/// exact means, variances `1 / (Σ⁻¹)_ii`.
pub fn kl_optimal_mean_field_of_gaussian(target: &TargetModel) -> Result<Approximation> {
    let gauss = target
        .as_gaussian()
        .ok_or_else(|| Error::domain("KL-optimal mean field requires a Gaussian target"))?;
    let sds: Vec<f64> = gauss.precision().diagonal().iter().map(|p| (1.0 / p).sqrt()).collect();
    mean_field_gaussian_approximation(gauss.mean().as_slice(), &sds)
}

/// Empirical distribution of `samples`; the covariance doubles as a
/// preconditioner, so it is forced positive-definite.
pub fn empirical_approximation(samples: &SampleMatrix) -> Result<Approximation> {
    let stats = summary_stats(samples)?;
    if let Some(i) = stats.sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateSamples(format!("coordinate {i} has zero spread")));
    }
    let d = samples.dim();
    let n = samples.n_samples();
    let mut covariance = if n > d {
        sample_covariance(samples)?
    } else {
        DMatrix::from_diagonal(&DVector::from_iterator(d, stats.sd.iter().map(|s| s * s)))
    };
    if covariance.clone().cholesky().is_none() || is_ill_conditioned(&covariance) {
        let load = 1e-8 * covariance.trace() / d as f64;
        for i in 0..d {
            covariance[(i, i)] += load;
        }
        if covariance.clone().cholesky().is_none() {
            covariance = DMatrix::from_diagonal(&covariance.diagonal());
        }
    }
    let rows = (0..n).map(|j| samples.row(j)).collect();
    Ok(Approximation {
        mean: DVector::from_vec(stats.mean),
        sd: DVector::from_vec(stats.sd),
        covariance,
        family: Family::Empirical {
            rows,
            samples: samples.clone(),
        },
    })
}

fn is_ill_conditioned(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    !(min > 1e-12 * max)
}
