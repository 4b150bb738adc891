//! Targeted accuracy diagnostics for posterior approximations.
//!
//! Given an unnormalized target density and an approximation to it, the
//! diagnostic runs many short Metropolis–Hastings chains started from the
//! approximation, adapts their shared step size across chains, and turns the
//! shift in each functional of interest (marginal means, variances,
//! quantiles, scalar summaries) into a high-confidence lower bound on the
//! approximation's error. A correlation check between the initial and final
//! chain states flags runs whose bounds should not be trusted.
//!
//! ```no_run
//! use taddaa::models::{correlated_gaussian_target, kl_optimal_mean_field_of_gaussian};
//! use taddaa::kernels::KernelKind;
//! use taddaa::runner::{run_taddaa, FunctionalSpec, RunConfig};
//!
//! let target = correlated_gaussian_target(30, &[0.0; 30], &[10.0].iter().chain([1.0; 29].iter()).copied().collect::<Vec<_>>(), 0.7).unwrap();
//! let approx = kl_optimal_mean_field_of_gaussian(&target).unwrap();
//! let mut config = RunConfig::new(KernelKind::Barker, 7);
//! config.functionals = vec![FunctionalSpec::AllMeans, FunctionalSpec::AllVariances];
//! let report = run_taddaa(&config, &target, &approx).unwrap();
//! println!("{}", report.reliability.passed);
//! ```

pub mod adaptation;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod models;
pub mod numerics;
pub mod runner;

pub use error::{Error, Result};
