use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tracefit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracefit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_bundled_and_merge_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(dir.path(), &["ingest", "bundled:karnataka"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("detectees,frequency\n0,766\n"));
    let n: u64 = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(n, 956);

    fs::write(dir.path().join("dup.csv"), "detectees,frequency\n2,10\n0,4\n2,24\n").unwrap();
    let o = tracefit(dir.path(), &["ingest", "dup.csv", "--out", "canon.csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("canon.csv")).unwrap(), "detectees,frequency\n0,4\n2,34\n");
    assert!(dir.path().join("canon.csv.manifest.toml").exists());

    // exporting and re-ingesting changes nothing
    let o = tracefit(dir.path(), &["ingest", "canon.csv"]);
    assert_eq!(stdout(&o), "detectees,frequency\n0,4\n2,34\n");
}

#[test]
fn ingest_rejects_bad_rows_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("neg.csv"), "detectees,frequency\n0,3\n-1,5\n").unwrap();
    let o = tracefit(dir.path(), &["ingest", "neg.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = tracefit(dir.path(), &["ingest", "empty.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));

    let o = tracefit(dir.path(), &["ingest", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(dir.path(), &["fit", "--data", "bundled:karnataka", "--family", "poisson"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tracefit(dir.path(), &["fit", "--data", "bundled:karnataka", "--family", "cauchy", "--r0", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(
        dir.path(),
        &["fit", "--data", "bundled:karnataka", "--family", "randommix", "--r0", "3", "--out", "rm.toml"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("rm.toml")).unwrap();
    assert!(report.contains("status = \"Converged\""));
    let manifest = fs::read_to_string(dir.path().join("rm.toml.manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"fit\""));
    assert!(manifest.contains("sha256:"));

    let o = tracefit(dir.path(), &["fit", "--data", "bundled:karnataka", "--family", "poisson", "--r0", "3"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("NotConverged"));

    let o = tracefit(dir.path(), &["fit", "--data", "bundled:karnataka", "--family", "fixed", "--r0", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fixed degree"));
}

#[test]
fn compare_single_family_and_in_row_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(
        dir.path(),
        &["compare", "--data", "bundled:karnataka", "--r0", "3", "--families", "randommix,fixed"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("randommix,converged"));
    assert!(rows[2].starts_with("fixed,failed"));
}

#[test]
fn sensitivity_grid_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(
        dir.path(),
        &["sensitivity", "--data", "bundled:karnataka", "--family", "negbinom", "--r0-grid", "5:2:0.5"],
    );
    assert_eq!(o.status.code(), Some(2));

    let o = tracefit(
        dir.path(),
        &["sensitivity", "--data", "bundled:karnataka", "--family", "randommix", "--r0-grid", "2:3:1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("r0,status,p,mean_k,shape,ll_max,aic,note\n2,"));
}

#[test]
fn simulate_without_tracing_detects_nobody() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(dir.path(), &["simulate", "--p", "0", "--max-infected", "3000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[1].starts_with("0,"));

    // this seed dies out before any diagnosis
    let o = tracefit(dir.path(), &["simulate", "--p", "0", "--max-infected", "3000", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "detectees,frequency\n");
}

#[test]
fn simulate_is_reproducible_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate", "--replicates", "3", "--max-infected", "5000", "--seed", "4", "--records", "r.csv",
        "--histogram", "h.csv",
    ];
    let o = tracefit(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r1 = fs::read(dir.path().join("r.csv")).unwrap();
    let h1 = fs::read(dir.path().join("h.csv")).unwrap();

    let o = tracefit(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("r.csv")).unwrap(), r1);

    fs::remove_file(dir.path().join("h.csv")).unwrap();
    let o = tracefit(dir.path(), &["rerun", "h.csv.manifest.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("h.csv")).unwrap(), h1);
    assert_eq!(fs::read(dir.path().join("r.csv")).unwrap(), r1);
}

#[test]
fn simulate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(dir.path(), &["simulate", "--degree", "poisson:-2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tracefit(dir.path(), &["simulate", "--p", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    let o = tracefit(dir.path(), &["simulate", "--window", "3:1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pmf_is_normalised() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefit(
        dir.path(),
        &["pmf", "--degree", "poisson:4", "--beta", "1.5", "--p", "0.6", "--mode", "full"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("i,probability\n0,"));
    let total: f64 = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!(total >= 1.0 - 1e-9 && total <= 1.0 + 1e-9, "{total}");

    let o = tracefit(dir.path(), &["pmf", "--degree", "poisson:4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gof_and_cdf_from_parameters_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let model = ["--degree", "negbinom:0.16:4.5", "--r0", "3", "--p", "0.72"];
    let mut args = vec!["cdf", "--data", "bundled:karnataka"];
    args.extend(model);
    let o = tracefit(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert!((first[1].parse::<f64>().unwrap() - 0.8013).abs() < 1e-4);

    let mut args = vec!["gof", "--data", "bundled:karnataka"];
    args.extend(model);
    let o = tracefit(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);
    assert!(stderr(&o).contains("dof = 3"));

    let o = tracefit(
        dir.path(),
        &["fit", "--data", "bundled:karnataka", "--family", "randommix", "--r0", "3", "--out", "rm.toml"],
    );
    assert_eq!(o.status.code(), Some(0));
    let o = tracefit(dir.path(), &["pmf", "--fit", "rm.toml", "--imax", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 7);
}
