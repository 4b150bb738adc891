//! End-to-end acceptance checks, one line of output per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use taddaa::adaptation::{initial_step_size, iteration_count, target_acceptance, SizingPolicy};
use taddaa::cli::{execute, sizing, ExperimentConfig};
use taddaa::diagnostics::{log_variance_ratio_ci, mean_difference_ci, quantile_difference_ci};
use taddaa::kernels::{mh_step, ChainState, KernelKind, Preconditioner};
use taddaa::models::{
    correlated_gaussian_target, mean_field_gaussian_approximation, FnDensity, TargetModel,
};
use taddaa::numerics::{RandomStream, SampleMatrix};
use taddaa::runner::{run_ensemble, run_taddaa, run_with_traces, DiagnosticReport, RunConfig};

const KERNELS: [KernelKind; 4] = [
    KernelKind::Rwmh,
    KernelKind::Mala,
    KernelKind::Barker,
    KernelKind::Hmc { leapfrog_steps: 10 },
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn scratch(tag: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(tag).tempdir().unwrap()
}

fn standard_normal(d: usize) -> TargetModel {
    TargetModel::new(
        "std_normal",
        FnDensity::new(d, |x: &DVector<f64>| -0.5 * x.norm_squared(), |x: &DVector<f64>| -x),
    )
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for f in flags {
        hit += f as usize;
        total += 1;
    }
    hit as f64 / total as f64
}

fn mean_normalized_variance_bound(report: &DiagnosticReport) -> f64 {
    let v = report.log_variances();
    v.iter().map(|f| f.normalized_bound).sum::<f64>() / v.len() as f64
}

// log10 of true over mean-field variance, from an explicit matrix inverse.
fn true_log10_variance_errors(d: usize) -> Vec<f64> {
    let mut sd = vec![1.0; d];
    sd[0] = 10f64.sqrt();
    let sigma = DMatrix::from_fn(d, d, |i, j| if i == j { sd[i] * sd[i] } else { 0.7 * sd[i] * sd[j] });
    let precision = sigma.clone().try_inverse().unwrap();
    (0..d).map(|i| (sigma[(i, i)] * precision[(i, i)]).log10()).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let s = sizing(KernelKind::Barker, 30, &SizingPolicy::default()).unwrap();
    let elapsed = start.elapsed();
    let ok = s.chains.abs_diff(386) <= 2 && elapsed < Duration::from_secs(1);
    outcome(ok, format!("N = {}, T = {}, {:.3}s", s.chains, s.iterations, elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let mut passed = true;
    let mut notes = Vec::new();
    for (d, file) in [(10, "gaussian_correlated_d10.toml"), (30, "gaussian_correlated_d30.toml")] {
        let dir = scratch("c2");
        let start = Instant::now();
        let report = execute(&preset(file), dir.path(), None, false).unwrap();
        let elapsed = start.elapsed();
        let var_detected = fraction(report.log_variances().iter().map(|f| f.detected));
        let mean_small = fraction(report.means().iter().map(|f| f.normalized_bound <= 0.15));
        let truth = true_log10_variance_errors(d);
        let true_error = truth.iter().sum::<f64>() / d as f64;
        let b_var = mean_normalized_variance_bound(&report);
        let ok = var_detected >= 0.9
            && mean_small >= 0.9
            && report.reliability.passed
            && b_var >= 0.4 * true_error
            && elapsed < Duration::from_secs(120);
        passed &= ok;
        notes.push(format!(
            "d={d}: var detected {var_detected:.2}, mean<=0.15 {mean_small:.2}, rho2_max {:.3}, \
             mean B_var {b_var:.3} vs true {true_error:.3}, {:.1}s",
            report.reliability.rho2_max,
            elapsed.as_secs_f64()
        ));
    }
    outcome(passed, notes.join("; "))
}

fn criterion_3() -> Outcome {
    let dir = scratch("c3");
    let start = Instant::now();
    let report = execute(&preset("neal_funnel_d20.toml"), dir.path(), None, false).unwrap();
    let elapsed = start.elapsed();
    let detected = fraction(report.log_variances().iter().skip(1).map(|f| f.detected));
    let ok = detected >= 0.8 && report.reliability.passed && elapsed < Duration::from_secs(120);
    outcome(
        ok,
        format!(
            "B_var detected for {detected:.2} of coordinates 2..d, rho2_max {:.3}, {:.1}s",
            report.reliability.rho2_max,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let d = 5;
    let target = standard_normal(d);
    let approx = mean_field_gaussian_approximation(&[0.0; 5], &[1.0; 5]).unwrap();
    let reps = 500;
    let start = Instant::now();
    let mut mean_hits = vec![0usize; d];
    let mut var_hits = vec![0usize; d];
    for rep in 0..reps {
        let mut config = RunConfig::new(KernelKind::Barker, 40_000 + rep);
        config.chains = Some(386);
        let report = run_taddaa(&config, &target, &approx).unwrap();
        for (i, f) in report.means().iter().enumerate() {
            mean_hits[i] += f.detected as usize;
        }
        for (i, f) in report.log_variances().iter().enumerate() {
            var_hits[i] += f.detected as usize;
        }
    }
    let rates: Vec<f64> = mean_hits
        .iter()
        .chain(&var_hits)
        .map(|h| *h as f64 / reps as f64)
        .collect();
    let worst = rates.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let ok = worst <= 0.05 + 0.02 && elapsed < Duration::from_secs(600);
    outcome(
        ok,
        format!(
            "T = {}, mean rates {:?}, variance rates {:?}, worst {worst:.3}, {:.1}s",
            iteration_count(KernelKind::Barker, d, &SizingPolicy::default()),
            &rates[..d],
            &rates[d..],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let (mu, sigma, n, reps) = (1.3, 2.0, 386, 2000);
    let start = Instant::now();
    let mut stream = RandomStream::new(55, 0);
    let (mut mean_cover, mut var_cover, mut median_cover) = (0, 0, 0);
    for _ in 0..reps {
        let draws: Vec<f64> = (0..n).map(|_| mu + sigma * stream.standard_normal()).collect();
        let samples = SampleMatrix::from_column(&draws).unwrap();
        let m = mean_difference_ci(&samples, 0, 0.0, 0.05).unwrap();
        let v = log_variance_ratio_ci(&samples, 0, 1.0, 0.05).unwrap();
        let q = quantile_difference_ci(&samples, 0, 0.5, 0.0, 0.05).unwrap();
        mean_cover += (m.lower <= mu && mu <= m.upper) as usize;
        let log_var = (sigma * sigma).ln();
        var_cover += (v.lower <= log_var && log_var <= v.upper) as usize;
        median_cover += (q.lower <= mu && mu <= q.upper) as usize;
    }
    let rates = [mean_cover, var_cover, median_cover].map(|c| c as f64 / reps as f64);
    let ok = rates.iter().all(|r| (r - 0.95).abs() <= 0.02) && start.elapsed() < Duration::from_secs(300);
    outcome(
        ok,
        format!("coverage mean {:.4}, log-variance {:.4}, median {:.4}", rates[0], rates[1], rates[2]),
    )
}

fn criterion_6() -> Outcome {
    let mean = DVector::from_vec(vec![1.0, -1.0]);
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let target = correlated_gaussian_target(2, &[1.0, -1.0], &[2.0, 1.0], 0.6 / 2f64.sqrt()).unwrap();
    let factor = cov.clone().cholesky().unwrap().l();
    let precond = Preconditioner::new(DMatrix::from_diagonal(&cov.diagonal())).unwrap();
    let (chains, steps) = (10_000, 20);
    let mut passed = true;
    let mut notes = Vec::new();
    for kind in KERNELS {
        let h = 0.5 * initial_step_size(kind, 2);
        let mut stream = RandomStream::new(66, 0);
        let finals: Vec<DVector<f64>> = (0..chains)
            .map(|_| {
                let x0 = &mean + &factor * stream.standard_normal_vector(2);
                let mut state = ChainState::new(x0, &target);
                for _ in 0..steps {
                    state = mh_step(kind, &state, h, &precond, &target, &mut stream).state;
                }
                state.position
            })
            .collect();
        let n = chains as f64;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            let xs: Vec<f64> = finals.iter().map(|x| x[i]).collect();
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            let z_mean = (m - mean[i]).abs() / (cov[(i, i)] / n).sqrt();
            let z_var = (v - cov[(i, i)]).abs() / (cov[(i, i)] * (2.0 / (n - 1.0)).sqrt());
            worst = worst.max(z_mean).max(z_var);
        }
        passed &= worst <= 3.0;
        notes.push(format!("{kind} max |z| {worst:.2}"));
    }
    outcome(passed, notes.join(", "))
}

fn criterion_7() -> Outcome {
    let target = standard_normal(1);
    let approx = mean_field_gaussian_approximation(&[0.0], &[1.0]).unwrap();
    let mut passed = true;
    let mut notes = Vec::new();
    for kind in KERNELS {
        let mut config = RunConfig::new(kind, 77);
        config.iterations = Some(200);
        let ensemble = run_ensemble(&config, &target, &approx, None).unwrap();
        let history = ensemble.acceptance_history();
        let tail = &history[history.len() - history.len() / 5..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let goal = target_acceptance(kind);
        passed &= (mean - goal).abs() <= 0.1;
        notes.push(format!("{kind} {mean:.3} (target {goal})"));
    }
    outcome(passed, notes.join(", "))
}

fn criterion_8() -> Outcome {
    let dir = scratch("c8");
    let body = fs::read_to_string(preset("gaussian_correlated_d10.toml")).unwrap()
        + "\n[overrides]\nstep_size_scale = 1e-8\niterations = 10\n";
    let config = dir.path().join("frozen.toml");
    fs::write(&config, body).unwrap();
    let mut hits = 0;
    for seed in 1..=50 {
        let out = dir.path().join(format!("run{seed}"));
        let status = Command::new(env!("CARGO_BIN_EXE_taddaa"))
            .args(["run", "--seed", &seed.to_string(), "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status
            .code();
        let report: DiagnosticReport =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        if status == Some(2) && report.reliability.rho2_max > 0.1 {
            hits += 1;
        }
    }
    outcome(hits == 50, format!("{hits}/50 runs flagged with exit code 2"))
}

fn criterion_9() -> Outcome {
    let config = ExperimentConfig::from_path(&preset("gaussian_correlated_d30.toml")).unwrap();
    let experiment = config.build(Path::new(".")).unwrap();
    let mut run = experiment.run.clone();
    let t = run.resolved_iterations(experiment.target.dim());
    run.iterations = Some(2 * t);
    run.trace_every = t;
    let report = run_with_traces(&run, &experiment.target, &experiment.approximation).unwrap();
    let variance_index: Vec<usize> = report
        .functionals
        .iter()
        .enumerate()
        .filter(|(_, f)| f.label.starts_with("log_variance"))
        .map(|(k, _)| k)
        .collect();
    let at = |step: usize| {
        let checkpoint = report.traces.as_ref().unwrap().iter().find(|c| c.t == step).unwrap();
        variance_index.iter().map(|&k| checkpoint.bounds[k]).sum::<f64>() / variance_index.len() as f64
    };
    let (b_t, b_2t) = (at(t), at(2 * t));
    let relative = (b_t - b_2t).abs() / b_2t;
    outcome(
        relative <= 0.2,
        format!("mean B_var at T={t}: {b_t:.4}, at 2T: {b_2t:.4}, relative change {relative:.3}"),
    )
}

fn criterion_10() -> Outcome {
    let dir = scratch("c10");
    let config = preset("gaussian_correlated_d10.toml");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let code = Command::new(env!("CARGO_BIN_EXE_taddaa"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .code();
        assert_eq!(code, Some(0));
        outputs.push(fs::read(out.join("report.json")).unwrap());
    }
    outcome(
        outputs[0] == outputs[1],
        format!("report.json sizes {} and {} bytes", outputs[0].len(), outputs[1].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("sizing reproduction", criterion_1),
        ("correlated Gaussian", criterion_2),
        ("Neal funnel", criterion_3),
        ("null calibration", criterion_4),
        ("interval coverage", criterion_5),
        ("kernel invariance", criterion_6),
        ("adaptation targeting", criterion_7),
        ("reliability-check power", criterion_8),
        ("trace plateau", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Outcome {
            passed: false,
            detail: "panicked".into(),
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name}: {}", k + 1, result.detail);
        failures += (!result.passed) as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
