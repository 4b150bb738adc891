//! Confidence intervals for functional shifts, the resulting error lower
//! bounds, and the start/end correlation reliability check.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    binomial_quantile, chi_square_quantile, pearson_correlation_squared, student_t_quantile,
    SampleMatrix,
};

/// Default pass threshold for `ρ²_max`.
pub const RELIABILITY_CUTOFF: f64 = 0.1;

/// Which functional an interval refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalTag {
    Mean { coordinate: usize },
    LogVariance { coordinate: usize },
    Quantile { coordinate: usize, p: f64 },
    ScalarMean { name: String },
    ScalarMedian { name: String },
}

impl fmt::Display for FunctionalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalTag::Mean { coordinate } => write!(f, "mean[{coordinate}]"),
            FunctionalTag::LogVariance { coordinate } => write!(f, "log_variance[{coordinate}]"),
            FunctionalTag::Quantile { coordinate, p } => write!(f, "quantile[{coordinate};p={p}]"),
            FunctionalTag::ScalarMean { name } => write!(f, "scalar_mean[{name}]"),
            FunctionalTag::ScalarMedian { name } => write!(f, "scalar_median[{name}]"),
        }
    }
}

/// Interval `(lower, upper)` at level `1 − α` for `F(π̂⁽ᵀ⁾) − F(π̂⁽⁰⁾)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub tag: FunctionalTag,
    /// Set when the samples had no spread and the interval collapsed to a point.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn contains_zero(&self) -> bool {
        self.lower <= 0.0 && 0.0 <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundResult {
    pub bound: f64,
    pub interval: ConfidenceInterval,
    pub detected: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha = {alpha} not in (0, 1)")))
    }
}

fn mean_and_sd(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((mean, (ss / (n - 1) as f64).sqrt()))
}

fn column(samples: &SampleMatrix, coordinate: usize) -> Result<Vec<f64>> {
    if coordinate >= samples.dim() {
        return Err(Error::domain(format!(
            "coordinate {coordinate} out of range for dimension {}",
            samples.dim()
        )));
    }
    Ok(samples.column(coordinate))
}

fn mean_ci_from_values(values: &[f64], reference_mean: f64, alpha: f64, tag: FunctionalTag) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    let (mean, sd) = mean_and_sd(values)?;
    let n = values.len();
    let half = sd / (n as f64).sqrt() * student_t_quantile(1.0 - alpha / 2.0, n - 1)?;
    let center = mean - reference_mean;
    Ok(ConfidenceInterval {
        lower: center - half,
        upper: center + half,
        level: 1.0 - alpha,
        tag,
        degenerate: sd == 0.0,
    })
}

/// t interval for `μ_i⁽ᵀ⁾ − μ_i⁽⁰⁾`: `x̄ − μ⁰ ± s / √N · t_{N−1}(1 − α/2)`.
pub fn mean_difference_ci(
    final_samples: &SampleMatrix,
    coordinate: usize,
    reference_mean: f64,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    let values = column(final_samples, coordinate)?;
    mean_ci_from_values(&values, reference_mean, alpha, FunctionalTag::Mean { coordinate })
}

/// Chi-square interval for `log(σ_i⁽ᵀ⁾² / σ_i⁽⁰⁾²)` (natural log).
pub fn log_variance_ratio_ci(
    final_samples: &SampleMatrix,
    coordinate: usize,
    reference_sd: f64,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if !(reference_sd > 0.0) {
        return Err(Error::domain(format!("reference sd {reference_sd} must be positive")));
    }
    let values = column(final_samples, coordinate)?;
    let (_, sd) = mean_and_sd(&values)?;
    if sd == 0.0 {
        return Err(Error::DegenerateSamples(format!(
            "coordinate {coordinate} has zero sample variance"
        )));
    }
    let df = values.len() - 1;
    let scaled = df as f64 * sd * sd / (reference_sd * reference_sd);
    let lower = (scaled / chi_square_quantile(1.0 - alpha / 2.0, df)?).ln();
    let upper = (scaled / chi_square_quantile(alpha / 2.0, df)?).ln();
    Ok(ConfidenceInterval {
        lower,
        upper,
        level: 1.0 - alpha,
        tag: FunctionalTag::LogVariance { coordinate },
        degenerate: false,
    })
}

/// One-based order-statistic ranks `(l, u)` with `l = B(α/2, N, p)` and
/// `u = B(1 − α/2, N, p) + 1`.
pub fn quantile_ci_ranks(n: usize, p: f64, alpha: f64) -> Result<(usize, usize)> {
    check_alpha(alpha)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile level {p} not in (0, 1)")));
    }
    let lower = binomial_quantile(alpha / 2.0, n, p)?;
    let upper = binomial_quantile(1.0 - alpha / 2.0, n, p)? + 1;
    for index in [lower, upper] {
        if index < 1 || index > n {
            return Err(Error::InsufficientChains { p, alpha, index, n });
        }
    }
    Ok((lower, upper))
}

fn quantile_ci_from_values(
    mut values: Vec<f64>,
    p: f64,
    reference_quantile: f64,
    alpha: f64,
    tag: FunctionalTag,
) -> Result<ConfidenceInterval> {
    let (l, u) = quantile_ci_ranks(values.len(), p, alpha)?;
    values.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        lower: values[l - 1] - reference_quantile,
        upper: values[u - 1] - reference_quantile,
        level: 1.0 - alpha,
        tag,
        degenerate: false,
    })
}

/// Order-statistic interval for `Q_p(π̂⁽ᵀ⁾) − Q_p(π̂⁽⁰⁾)` on one coordinate.
pub fn quantile_difference_ci(
    final_samples: &SampleMatrix,
    coordinate: usize,
    p: f64,
    reference_quantile: f64,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    let values = column(final_samples, coordinate)?;
    quantile_ci_from_values(values, p, reference_quantile, alpha, FunctionalTag::Quantile { coordinate, p })
}

/// `B = 1{0 ∉ [ℓ, u]} · min(|ℓ|, |u|)`.
pub fn error_lower_bound(interval: &ConfidenceInterval) -> LowerBoundResult {
    let detected = !interval.contains_zero();
    let bound = if detected {
        interval.lower.abs().min(interval.upper.abs())
    } else {
        0.0
    };
    LowerBoundResult {
        bound,
        interval: interval.clone(),
        detected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub rho2_max: f64,
}

/// Worst-coordinate squared correlation between chain starts and ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityResult {
    /// Per-coordinate `ρ²`; constant coordinates are recorded as 1.
    pub rho2_per_coordinate: Vec<f64>,
    pub degenerate_coordinates: Vec<usize>,
    pub rho2_max: f64,
    pub cutoff: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

pub fn reliability_check(
    initial: &SampleMatrix,
    final_samples: &SampleMatrix,
    cutoff: f64,
) -> Result<ReliabilityResult> {
    if initial.dim() != final_samples.dim() {
        return Err(Error::DimensionMismatch {
            expected: initial.dim(),
            got: final_samples.dim(),
        });
    }
    if initial.n_samples() != final_samples.n_samples() {
        return Err(Error::DimensionMismatch {
            expected: initial.n_samples(),
            got: final_samples.n_samples(),
        });
    }
    if initial.n_samples() < 3 {
        return Err(Error::TooFewSamples {
            required: 3,
            got: initial.n_samples(),
        });
    }
    let mut degenerate_coordinates = Vec::new();
    let rho2_per_coordinate: Vec<f64> = (0..initial.dim())
        .map(|i| {
            pearson_correlation_squared(&initial.column(i), &final_samples.column(i)).unwrap_or_else(|| {
                degenerate_coordinates.push(i);
                1.0
            })
        })
        .collect();
    let rho2_max = rho2_per_coordinate.iter().copied().fold(0.0, f64::max);
    Ok(ReliabilityResult {
        passed: rho2_max < cutoff && degenerate_coordinates.is_empty(),
        rho2_per_coordinate,
        degenerate_coordinates,
        rho2_max,
        cutoff,
        trajectory: None,
    })
}

/// Mean and median bounds for a scalar functional evaluated per sample. The
/// initial-side mean and median come from `initial_values`, which should be
/// a large set of draws from the approximation.
pub fn scalar_functional_diagnostics(
    name: &str,
    initial_values: &[f64],
    final_values: &[f64],
    alpha: f64,
) -> Result<(LowerBoundResult, LowerBoundResult)> {
    if initial_values.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: initial_values.len(),
        });
    }
    let reference_mean = initial_values.iter().sum::<f64>() / initial_values.len() as f64;
    let initial = SampleMatrix::from_column(initial_values)?;
    let reference_median = crate::numerics::sample_quantile(&initial, 0.5, 0)?;
    let mean_ci = mean_ci_from_values(
        final_values,
        reference_mean,
        alpha,
        FunctionalTag::ScalarMean { name: name.into() },
    )?;
    let median_ci = quantile_ci_from_values(
        final_values.to_vec(),
        0.5,
        reference_median,
        alpha,
        FunctionalTag::ScalarMedian { name: name.into() },
    )?;
    Ok((error_lower_bound(&mean_ci), error_lower_bound(&median_ci)))
}
