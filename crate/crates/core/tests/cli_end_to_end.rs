use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use taddaa::cli::render_report;
use taddaa::runner::DiagnosticReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taddaa"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

const ONE_D: &str = r#"
kernel = "mala"
seed = 4
trace_every = 1
functionals = ["mean:0", "variance:0", "quantile:0:0.5"]
[target]
kind = "gaussian_correlated"
dim = 1
[approximation]
kind = "mean_field_gaussian"
sd = [1.5]
[overrides]
chains = 200
iterations = 50
"#;

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn malformed_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for body in [
        "kernel = \"barker\"\n[target\nkind = 1",
        &format!("{ONE_D}\nunexpected = true\n"),
        &ONE_D.replace("\"mala\"", "\"nuts\""),
        &ONE_D.replace("chains = 200", "chains = 0"),
        &ONE_D.replace("mean:0", "mean:7"),
    ] {
        let config = write_config(dir.path(), body);
        assert_eq!(run("run", &config, &out, &[]), 1, "{body}");
        assert!(!out.exists());
    }
    assert_eq!(run("run", &dir.path().join("missing.toml"), &out, &[]), 1);
    assert!(!out.exists());
}

#[test]
fn trace_rows_and_report_agree() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), ONE_D);
    let out = dir.path().join("out");
    let code = run("trace", &config, &out, &[]);
    assert!(code == 0 || code == 2);

    let (header, rows) = parse_csv(&out.join("traces.csv"));
    assert_eq!(header, ["t", "functional_tag", "bound", "rho2_max"]);
    let report: DiagnosticReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for f in &report.functionals {
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == f.label).collect();
        assert_eq!(mine.len(), 51, "{}", f.label);
        assert_eq!(mine[0][0], "0");
        assert_eq!(mine[0][3].parse::<f64>().unwrap(), 1.0);
        let last = mine.last().unwrap();
        assert_eq!(last[0], "50");
        assert_eq!(last[2].parse::<f64>().unwrap(), f.bound);
    }
}

#[test]
fn report_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), ONE_D);
    let out = dir.path().join("out");
    run("trace", &config, &out, &[]);
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let report: DiagnosticReport = serde_json::from_str(&text).unwrap();
    assert_eq!(render_report(&report).unwrap(), text);
}

#[test]
fn csv_outputs_have_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), ONE_D);
    let out = dir.path().join("out");
    run("run", &config, &out, &[]);
    assert!(!out.join("traces.csv").exists());
    let (header, rows) = parse_csv(&out.join("bounds.csv"));
    assert_eq!(header, ["functional_tag", "bound", "lower", "upper", "detected", "normalized_bound"]);
    assert_eq!(rows.len(), 3);
    for row in &rows {
        for field in [&row[1], &row[2], &row[3], &row[5]] {
            assert!(field.parse::<f64>().is_ok(), "{field}");
            assert!(!field.contains(','));
        }
        assert!(row[4] == "true" || row[4] == "false");
    }
    let (header, rows) = parse_csv(&out.join("reliability.csv"));
    assert_eq!(header, ["coordinate", "rho2"]);
    assert_eq!(rows, vec![vec!["0".to_string(), rows[0][1].clone()]]);
    assert!(out.join("timing.json").exists());
}

#[test]
fn seed_and_thread_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), ONE_D);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run("run", &config, &a, &[]);
    run("run", &config, &b, &["--threads", "1"]);
    run("run", &config, &c, &["--seed", "77"]);
    let read = |p: &Path| fs::read(p.join("report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let report: DiagnosticReport = serde_json::from_slice(&read(&c)).unwrap();
    assert_eq!(report.seed, 77);
}

#[test]
fn frozen_chains_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(preset("gaussian_correlated_d10.toml")).unwrap()
        + "\n[overrides]\nstep_size_scale = 1e-8\niterations = 10\n";
    let config = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    assert_eq!(run("run", &config, &out, &[]), 2);
    let report: DiagnosticReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.reliability.rho2_max > 0.1);
    assert!(!report.reliability.passed);
}

#[test]
fn trace_subcommand_needs_trace_every() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &ONE_D.replace("trace_every = 1", "trace_every = 0"));
    let out = dir.path().join("out");
    assert_eq!(run("trace", &config, &out, &[]), 1);
    assert!(!out.exists());
}

#[test]
fn empirical_approximation_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b\n");
    for k in 0..300 {
        let u = (k as f64 + 0.5) / 300.0;
        csv.push_str(&format!("{},{}\n", 0.4 * (u - 0.5), 0.4 * ((u * 7.0) % 1.0 - 0.5)));
    }
    fs::write(dir.path().join("draws.csv"), csv).unwrap();
    let body = r#"
kernel = "barker"
[target]
kind = "gaussian_correlated"
dim = 2
[approximation]
kind = "empirical"
path = "draws.csv"
has_header = true
[overrides]
chains = 150
"#;
    let config = write_config(dir.path(), body);
    let out = dir.path().join("out");
    let code = run("run", &config, &out, &[]);
    assert!(code == 0 || code == 2);
    let (_, rows) = parse_csv(&out.join("bounds.csv"));
    let variances: Vec<&Vec<String>> = rows.iter().filter(|r| r[0].starts_with("log_variance")).collect();
    assert!(variances.iter().all(|r| r[4] == "true"));
}

#[test]
fn sizing_prints_four_quantities() {
    let output = bin()
        .args(["sizing", "--kernel", "barker", "--dim", "30"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    let values: Vec<(&str, f64)> = text
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(' ').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(values[0].0, "chains");
    assert!((384.0..=388.0).contains(&values[0].1));
    assert_eq!(values[1], ("iterations", 155.0));
    assert!((values[2].1 - 5.76 / 30f64.cbrt()).abs() < 1e-12);
    assert_eq!(values[3], ("target_acceptance", 0.4));

    let hmc = bin()
        .args(["sizing", "--kernel", "hmc", "--dim", "16", "--leapfrog-steps", "10"])
        .output()
        .unwrap();
    assert!(String::from_utf8(hmc.stdout).unwrap().contains("iterations 10\n"));
    let bad = bin().args(["sizing", "--kernel", "gibbs", "--dim", "3"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
