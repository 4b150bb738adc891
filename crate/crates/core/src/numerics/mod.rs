//! Statistical primitives: special functions, quantile functions,
//! reproducible random streams, and sample summaries.

mod distributions;
mod rng;
pub mod special;
mod stats;

pub use distributions::{
    binomial_cdf, binomial_quantile, chi_square_cdf, chi_square_quantile, normal_cdf,
    normal_quantile, student_t_cdf, student_t_quantile,
};
pub use rng::RandomStream;
pub use stats::{
    pearson_correlation_squared, sample_covariance, sample_quantile, summary_stats,
    SampleMatrix, SummaryStats,
};
