//! Command-line front end: TOML experiment files, the `run`, `trace` and
//! `sizing` subcommands, and the report and CSV writers.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    chain_count, initial_step_size, iteration_count, target_acceptance, SizingPolicy,
};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, DEFAULT_LEAPFROG_STEPS};
use crate::models::{
    correlated_gaussian_target, empirical_approximation, kl_optimal_mean_field_of_gaussian,
    mean_field_gaussian_approximation, neal_funnel_target, synthetic_logistic_regression_target,
    Approximation, TargetModel,
};
use crate::numerics::SampleMatrix;
use crate::runner::{
    run_taddaa, run_with_traces, DiagnosticReport, FunctionalSpec, InitialSide, RunConfig,
    ScalarFunctional,
};

/// Exit status for a completed run whose reliability check passed.
pub const EXIT_OK: i32 = 0;
/// Exit status for any error; no output files are written.
pub const EXIT_ERROR: i32 = 1;
/// Exit status for a completed run whose reliability check failed.
pub const EXIT_UNRELIABLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "taddaa", version, about = "Lower bounds on the error of a posterior approximation")]
pub struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the diagnostic and write report.json, bounds.csv and reliability.csv.
    Run(RunArgs),
    /// Like `run`, and also write traces.csv with per-checkpoint bounds.
    Trace(RunArgs),
    /// Print the number of chains, iterations, initial step size and target
    /// acceptance rate without running anything.
    Sizing(SizingArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SizingArgs {
    #[arg(long)]
    pub kernel: String,
    #[arg(long = "dim")]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta_mean: f64,
    #[arg(long, default_value_t = 0.15)]
    pub delta_var: f64,
    #[arg(long, default_value_t = 50.0)]
    pub c: f64,
    #[arg(long, default_value_t = DEFAULT_LEAPFROG_STEPS)]
    pub leapfrog_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    GaussianCorrelated {
        dim: usize,
        /// Repeated to length `dim` using its last value.
        #[serde(default = "zeros")]
        mean: Vec<f64>,
        #[serde(default = "ones")]
        variances: Vec<f64>,
        #[serde(default)]
        rho: f64,
    },
    NealFunnel {
        dim: usize,
    },
    LogisticSynthetic {
        dim: usize,
        n_obs: usize,
        #[serde(default = "one")]
        prior_sd: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApproximationConfig {
    MeanFieldGaussian {
        #[serde(default = "zeros")]
        mean: Vec<f64>,
        #[serde(default = "ones")]
        sd: Vec<f64>,
    },
    KlOptimalMeanField,
    /// Rows of a numeric CSV file; relative paths resolve against the
    /// config file's directory.
    Empirical {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub chains: Option<usize>,
    pub iterations: Option<usize>,
    pub step_size_scale: Option<f64>,
}

/// Contents of an experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetConfig,
    pub approximation: ApproximationConfig,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_leapfrog")]
    pub leapfrog_steps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta_mean")]
    pub delta_mean: f64,
    #[serde(default = "default_delta_var")]
    pub delta_var: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_functionals")]
    pub functionals: Vec<String>,
    #[serde(default)]
    pub trace_every: usize,
    #[serde(default = "default_cutoff")]
    pub reliability_cutoff: f64,
    #[serde(default)]
    pub initial_side: InitialSide,
    #[serde(default)]
    pub overrides: Overrides,
}

fn zeros() -> Vec<f64> {
    vec![0.0]
}
fn ones() -> Vec<f64> {
    vec![1.0]
}
fn one() -> f64 {
    1.0
}
fn default_kernel() -> String {
    "barker".into()
}
fn default_leapfrog() -> usize {
    DEFAULT_LEAPFROG_STEPS
}
fn default_alpha() -> f64 {
    0.05
}
fn default_delta_mean() -> f64 {
    0.1
}
fn default_delta_var() -> f64 {
    0.15
}
fn default_c() -> f64 {
    50.0
}
fn default_cutoff() -> f64 {
    crate::diagnostics::RELIABILITY_CUTOFF
}
fn default_functionals() -> Vec<String> {
    vec!["mean:*".into(), "variance:*".into()]
}

/// A target, an approximation and the run settings built from a config.
pub struct Experiment {
    pub target: TargetModel,
    pub approximation: Approximation,
    pub run: RunConfig,
}

fn fill(values: &[f64], d: usize, what: &str) -> Result<Vec<f64>> {
    match values.last() {
        None => Err(Error::Config(format!("{what} must not be empty"))),
        Some(_) if values.len() > d => Err(Error::Config(format!(
            "{what} has {} entries but the dimension is {d}",
            values.len()
        ))),
        Some(&last) => Ok((0..d).map(|i| values.get(i).copied().unwrap_or(last)).collect()),
    }
}

/// Parses `mean:*`, `mean:I`, `variance:*`, `variance:I`, `quantile:*:P`,
/// `quantile:I:P` and `scalar:log_density` / `scalar:squared_norm`.
/// Coordinates are zero-based.
pub fn parse_functional(text: &str) -> Result<FunctionalSpec> {
    let bad = || Error::Config(format!("cannot parse functional `{text}`"));
    let parts: Vec<&str> = text.trim().split(':').collect();
    let coordinate = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        ["mean", "*"] => Ok(FunctionalSpec::AllMeans),
        ["mean", i] => Ok(FunctionalSpec::Mean(coordinate(i)?)),
        ["variance", "*"] => Ok(FunctionalSpec::AllVariances),
        ["variance", i] => Ok(FunctionalSpec::Variance(coordinate(i)?)),
        ["quantile", i, p] => {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("quantile level {p} not in (0, 1)")));
            }
            if *i == "*" {
                Ok(FunctionalSpec::AllQuantiles(p))
            } else {
                Ok(FunctionalSpec::Quantile {
                    coordinate: coordinate(i)?,
                    p,
                })
            }
        }
        ["scalar", "log_density"] => Ok(FunctionalSpec::Scalar(ScalarFunctional::LogDensity)),
        ["scalar", "squared_norm"] => Ok(FunctionalSpec::Scalar(ScalarFunctional::SquaredNorm)),
        _ => Err(bad()),
    }
}

fn read_sample_csv(path: &Path, has_header: bool) -> Result<SampleMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| {
            Error::Config(format!("{}: row {}: {e}", path.display(), line + 1))
        })?;
        rows.push(nalgebra::DVector::from_vec(row));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config(format!("{}: rows have differing lengths", path.display())));
    }
    SampleMatrix::from_rows(&rows)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn kernel_kind(&self) -> Result<KernelKind> {
        KernelKind::parse(&self.kernel, self.leapfrog_steps)
    }

    pub fn sizing(&self) -> SizingPolicy {
        SizingPolicy {
            delta_mean: self.delta_mean,
            delta_var: self.delta_var,
            alpha: self.alpha,
            c: self.c,
        }
    }

    pub fn build_target(&self) -> Result<TargetModel> {
        match &self.target {
            TargetConfig::GaussianCorrelated {
                dim,
                mean,
                variances,
                rho,
            } => correlated_gaussian_target(
                *dim,
                &fill(mean, *dim, "target.mean")?,
                &fill(variances, *dim, "target.variances")?,
                *rho,
            ),
            TargetConfig::NealFunnel { dim } => neal_funnel_target(*dim),
            TargetConfig::LogisticSynthetic {
                dim,
                n_obs,
                prior_sd,
                data_seed,
            } => synthetic_logistic_regression_target(*n_obs, *dim, *prior_sd, *data_seed),
        }
    }

    pub fn build_approximation(&self, target: &TargetModel, base_dir: &Path) -> Result<Approximation> {
        let d = target.dim();
        match &self.approximation {
            ApproximationConfig::MeanFieldGaussian { mean, sd } => mean_field_gaussian_approximation(
                &fill(mean, d, "approximation.mean")?,
                &fill(sd, d, "approximation.sd")?,
            ),
            ApproximationConfig::KlOptimalMeanField => kl_optimal_mean_field_of_gaussian(target),
            ApproximationConfig::Empirical { path, has_header } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                empirical_approximation(&read_sample_csv(&path, *has_header)?)
            }
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let functionals = self
            .functionals
            .iter()
            .map(|f| parse_functional(f))
            .collect::<Result<Vec<_>>>()?;
        let mut run = RunConfig::new(self.kernel_kind()?, self.seed);
        run.alpha = self.alpha;
        run.sizing = self.sizing();
        run.functionals = functionals;
        run.trace_every = self.trace_every;
        run.chains = self.overrides.chains;
        run.iterations = self.overrides.iterations;
        run.step_size_scale = self.overrides.step_size_scale.unwrap_or(1.0);
        run.reliability_cutoff = self.reliability_cutoff;
        run.initial_side = self.initial_side;
        run.validate()?;
        Ok(run)
    }

    /// Validates every setting and constructs the target and approximation.
    pub fn build(&self, base_dir: &Path) -> Result<Experiment> {
        let run = self.run_config()?;
        let target = self.build_target()?;
        let approximation = self.build_approximation(&target, base_dir)?;
        if approximation.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: approximation.dim(),
            });
        }
        Ok(Experiment {
            target,
            approximation,
            run,
        })
    }
}

/// Pretty JSON with a trailing newline; the exact bytes written to report.json.
pub fn render_report(report: &DiagnosticReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

// `{:?}` gives the shortest round-tripping decimal, never locale-dependent.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn bounds_csv(report: &DiagnosticReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["functional_tag", "bound", "lower", "upper", "detected", "normalized_bound"])?;
    for f in &report.functionals {
        w.write_record([
            f.label.clone(),
            num(f.bound),
            num(f.interval.lower),
            num(f.interval.upper),
            f.detected.to_string(),
            num(f.normalized_bound),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn reliability_csv(report: &DiagnosticReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coordinate", "rho2"])?;
    for (i, r) in report.reliability.rho2_per_coordinate.iter().enumerate() {
        w.write_record([i.to_string(), num(*r)])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn traces_csv(report: &DiagnosticReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "functional_tag", "bound", "rho2_max"])?;
    for checkpoint in report.traces.iter().flatten() {
        for (f, b) in report.functionals.iter().zip(&checkpoint.bounds) {
            w.write_record([checkpoint.t.to_string(), f.label.clone(), num(*b), num(checkpoint.rho2_max)])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Serialize)]
struct Timing {
    wall_time_seconds: f64,
}

/// Runs the experiment in `config_path` and writes its outputs to `out_dir`.
/// Nothing is written unless the run completes.
pub fn execute(config_path: &Path, out_dir: &Path, seed: Option<u64>, traced: bool) -> Result<DiagnosticReport> {
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if traced && config.trace_every == 0 {
        return Err(Error::Config("the trace subcommand needs trace_every >= 1".into()));
    }
    let base_dir = config_path.parent().unwrap_or_else(|| Path::new("."));
    let experiment = config.build(base_dir)?;
    let report = if traced {
        run_with_traces(&experiment.run, &experiment.target, &experiment.approximation)?
    } else {
        run_taddaa(&experiment.run, &experiment.target, &experiment.approximation)?
    };

    let mut files = vec![
        ("report.json", render_report(&report)?.into_bytes()),
        ("bounds.csv", bounds_csv(&report)?),
        ("reliability.csv", reliability_csv(&report)?),
        (
            "timing.json",
            serde_json::to_vec_pretty(&Timing {
                wall_time_seconds: report.wall_time.as_secs_f64(),
            })?,
        ),
    ];
    if traced {
        files.push(("traces.csv", traces_csv(&report)?));
    }
    fs::create_dir_all(out_dir)?;
    for (name, bytes) in files {
        fs::write(out_dir.join(name), bytes)?;
    }
    Ok(report)
}

/// The four quantities printed by `sizing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizingSummary {
    pub chains: usize,
    pub iterations: usize,
    pub initial_step_size: f64,
    pub target_acceptance: f64,
}

pub fn sizing(kernel: KernelKind, d: usize, policy: &SizingPolicy) -> Result<SizingSummary> {
    kernel.validate()?;
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    Ok(SizingSummary {
        chains: chain_count(policy)?,
        iterations: iteration_count(kernel, d, policy),
        initial_step_size: initial_step_size(kernel, d),
        target_acceptance: target_acceptance(kernel),
    })
}

fn exit_for(report: &DiagnosticReport) -> i32 {
    if report.reliability.passed {
        EXIT_OK
    } else {
        EXIT_UNRELIABLE
    }
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    report_exit(execute(config_path, out_dir, seed, false))
}

pub fn cmd_trace(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    report_exit(execute(config_path, out_dir, seed, true))
}

fn report_exit(result: Result<DiagnosticReport>) -> i32 {
    match result {
        Ok(report) => {
            if !report.reliability.passed {
                eprintln!(
                    "warning: reliability check failed (rho2_max = {:.4}, cutoff {})",
                    report.reliability.rho2_max, report.reliability.cutoff
                );
            }
            exit_for(&report)
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn cmd_sizing(args: &SizingArgs) -> i32 {
    let summary = KernelKind::parse(&args.kernel, args.leapfrog_steps).and_then(|kernel| {
        sizing(
            kernel,
            args.dim,
            &SizingPolicy {
                delta_mean: args.delta_mean,
                delta_var: args.delta_var,
                alpha: args.alpha,
                c: args.c,
            },
        )
    });
    match summary {
        Ok(s) => {
            println!("chains {}", s.chains);
            println!("iterations {}", s.iterations);
            println!("initial_step_size {}", num(s.initial_step_size));
            println!("target_acceptance {}", num(s.target_acceptance));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(&a.config, &a.out, a.seed),
        Command::Trace(a) => cmd_trace(&a.config, &a.out, a.seed),
        Command::Sizing(a) => cmd_sizing(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { EXIT_OK } else { EXIT_ERROR };
        }
    };
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            EXIT_ERROR
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        None => dispatch(&cli),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kernel = "rwmh"
seed = 3
[target]
kind = "gaussian_correlated"
dim = 3
variances = [4.0, 1.0]
rho = 0.2
[approximation]
kind = "mean_field_gaussian"
sd = [2.0, 1.0]
[overrides]
chains = 30
iterations = 5
"#;

    #[test]
    fn minimal_config_builds() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let exp = config.build(Path::new(".")).unwrap();
        assert_eq!(exp.target.dim(), 3);
        assert_eq!(exp.approximation.sd().as_slice(), &[2.0, 1.0, 1.0]);
        assert_eq!(exp.run.kernel, KernelKind::Rwmh);
        assert_eq!(exp.run.chains, Some(30));
        assert_eq!(exp.run.functionals.len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra_top = format!("bogus = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml_str(&extra_top).is_err());
        let extra_target = MINIMAL.replace("rho = 0.2", "rho = 0.2\nskew = 1");
        assert!(ExperimentConfig::from_toml_str(&extra_target).is_err());
        let extra_override = MINIMAL.replace("iterations = 5", "iterations = 5\nthreads = 2");
        assert!(ExperimentConfig::from_toml_str(&extra_override).is_err());
        let bad_kind = MINIMAL.replace("\"gaussian_correlated\"", "\"banana\"");
        assert!(ExperimentConfig::from_toml_str(&bad_kind).is_err());
    }

    #[test]
    fn schema_errors_carry_line_context() {
        let broken = MINIMAL.replace("dim = 3", "dim = \"three\"");
        let msg = ExperimentConfig::from_toml_str(&broken).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn fill_rule() {
        assert_eq!(fill(&[10.0, 1.0], 4, "v").unwrap(), vec![10.0, 1.0, 1.0, 1.0]);
        assert!(fill(&[], 2, "v").is_err());
        assert!(fill(&[1.0, 2.0, 3.0], 2, "v").is_err());
    }

    #[test]
    fn functional_strings() {
        assert!(matches!(parse_functional("mean:*").unwrap(), FunctionalSpec::AllMeans));
        assert!(matches!(parse_functional("variance:4").unwrap(), FunctionalSpec::Variance(4)));
        assert!(matches!(
            parse_functional("quantile:2:0.9").unwrap(),
            FunctionalSpec::Quantile { coordinate: 2, p } if p == 0.9
        ));
        assert!(matches!(parse_functional("quantile:*:0.5").unwrap(), FunctionalSpec::AllQuantiles(_)));
        assert!(matches!(parse_functional("scalar:log_density").unwrap(), FunctionalSpec::Scalar(_)));
        for bad in ["mean", "mean:x", "quantile:1:1.5", "scalar:foo", "median:1"] {
            assert!(parse_functional(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sizing_examples() {
        let policy = SizingPolicy::default();
        let s = sizing(KernelKind::Barker, 30, &policy).unwrap();
        assert!((384..=388).contains(&s.chains));
        assert_eq!(s.iterations, 155);
        assert!((s.initial_step_size - 5.76 / 30f64.cbrt()).abs() < 1e-12);
        assert_eq!(s.target_acceptance, 0.4);
        let hmc = sizing(KernelKind::Hmc { leapfrog_steps: 10 }, 16, &policy).unwrap();
        assert_eq!(hmc.iterations, 10);
        let rw = sizing(KernelKind::Rwmh, 10, &policy).unwrap();
        assert!((rw.initial_step_size - 0.576).abs() < 1e-12);
    }

    #[test]
    fn csv_numbers_are_plain() {
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(1.0), "1.0");
        assert_eq!(num(-2.5e-12), "-2.5e-12");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["taddaa", "frobnicate"]), EXIT_ERROR);
        assert_eq!(main_with_args(["taddaa", "run", "--config"]), EXIT_ERROR);
        assert_eq!(main_with_args(["taddaa", "--help"]), EXIT_OK);
    }
}
