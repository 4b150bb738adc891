use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An `N x d` matrix of chain states: one row per chain, one column per
/// coordinate. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    values: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::TooFewSamples {
                required: 1,
                got: values.nrows(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("sample matrix contains non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, d, |j, i| rows[j][i]))
    }

    /// Single-coordinate convenience constructor.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, coordinate: usize) -> Vec<f64> {
        self.values.column(coordinate).iter().copied().collect()
    }

    pub fn row(&self, j: usize) -> DVector<f64> {
        self.values.row(j).transpose()
    }

    fn check_coordinate(&self, coordinate: usize) -> Result<()> {
        if coordinate < self.dim() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "coordinate {coordinate} out of range for dimension {}",
                self.dim()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub mean: Vec<f64>,
    /// Sample standard deviation with the `N - 1` denominator.
    pub sd: Vec<f64>,
}

pub fn summary_stats(samples: &SampleMatrix) -> Result<SummaryStats> {
    let n = samples.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let (mean, sd) = (0..samples.dim())
        .map(|i| {
            let col = samples.values.column(i);
            let mean = col.sum() / n as f64;
            let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
            (mean, (ss / (n - 1) as f64).sqrt())
        })
        .unzip();
    Ok(SummaryStats { mean, sd })
}

/// Lower empirical quantile `X_(ceil(N p))` of one coordinate.
pub fn sample_quantile(samples: &SampleMatrix, p: f64, coordinate: usize) -> Result<f64> {
    samples.check_coordinate(coordinate)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} not in [0, 1]")));
    }
    let mut col = samples.column(coordinate);
    col.sort_by(f64::total_cmp);
    Ok(col[order_statistic_rank(col.len(), p) - 1])
}

/// One-based rank `ceil(n p)` clamped to `1..=n`, treating `n p` within
/// rounding noise of an integer as that integer.
pub(crate) fn order_statistic_rank(n: usize, p: f64) -> usize {
    let np = n as f64 * p;
    let nearest = np.round();
    let rank = if (np - nearest).abs() <= 1e-9 * (n as f64).max(1.0) {
        nearest
    } else {
        np.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Squared Pearson correlation, or `None` when either vector is constant
/// (or the lengths disagree or are below two).
pub fn pearson_correlation_squared(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if is_negligible(saa, a) || is_negligible(sbb, b) {
        return None;
    }
    Some((sab * sab / (saa * sbb)).clamp(0.0, 1.0))
}

fn is_negligible(sum_sq: f64, xs: &[f64]) -> bool {
    let scale = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    sum_sq <= f64::MIN_POSITIVE || sum_sq.sqrt() <= 64.0 * f64::EPSILON * scale * (xs.len() as f64).sqrt()
}

/// Sample covariance (denominator `N - 1`).
pub fn sample_covariance(samples: &SampleMatrix) -> Result<DMatrix<f64>> {
    let n = samples.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let means = samples.values.row_mean();
    let centered = DMatrix::from_fn(n, samples.dim(), |j, i| samples.values[(j, i)] - means[i]);
    Ok(centered.transpose() * &centered / (n - 1) as f64)
}
