use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use tracefit_core::inference::{content_digest, fit_mle};
use tracefit_core::kernels::nondimensionalize;
use tracefit_core::mixture::detectee_pmf;
use tracefit_core::selection::{cdf_csv, chi_square_gof, cumulative_compare};
use tracefit_core::simulator::{
    records_to_csv, records_to_histogram, simulate_stream, GraphKind, SimConfig, SimOutcome, StopCriteria,
    DEFAULT_MAX_INFECTED, RECORDS_HEADER,
};
use tracefit_core::{
    DegreeFamily, DegreeModel, DetecteeHistogram, DetecteePmf, EpidemicParams, FitOptions, FitResult, FitStatus,
    GofReport, TracingMode,
};

use crate::io::{self, RunManifest};
use crate::specs;
use crate::{
    CdfArgs, Cli, CliError, Command, CompareArgs, FitArgs, FitSettings, GofArgs, IngestArgs, ModelArgs, PmfArgs,
    RerunArgs, SensitivityArgs, SimulateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    let name = command.name();
    match command {
        Command::Ingest(a) => ingest(a, name, argv),
        Command::Fit(a) => fit(a, name, argv),
        Command::Compare(a) => compare(a, name, argv),
        Command::Sensitivity(a) => sensitivity(a, name, argv),
        Command::Simulate(a) => simulate(a, name, argv),
        Command::Pmf(a) => pmf(a, name, argv),
        Command::Gof(a) => gof(a, name, argv),
        Command::Cdf(a) => cdf(a, name, argv),
        Command::Rerun(a) => rerun(a),
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

/// Flattens the parsed arguments into `name = value` strings.
fn options_of<T: Serialize>(args: &T) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Ok(toml::Value::Table(t)) = toml::Value::try_from(args) {
        for (k, v) in t {
            let s = match v {
                toml::Value::String(s) => s,
                other => other.to_string(),
            };
            out.insert(k, s);
        }
    }
    out
}

/// Writes `text` to `out` with its manifest alongside, or prints it.
fn emit(out: Option<&Path>, text: &str, manifest: &RunManifest) -> Result<()> {
    match out {
        Some(path) => {
            io::write_atomic(path, text)?;
            manifest.write_next_to(path)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_mode(s: &str) -> Result<TracingMode> {
    s.parse().map_err(usage)
}

fn parse_family(s: &str) -> Result<DegreeFamily> {
    s.parse().map_err(usage)
}

impl FitSettings {
    fn options(&self) -> Result<FitOptions> {
        if !(self.tol > 0.0) {
            return Err(usage(format!("--tol must be positive, got {}", self.tol)));
        }
        if self.kmax < 2 {
            return Err(usage("--kmax must be at least 2"));
        }
        Ok(FitOptions {
            power_law_k_max: self.kmax,
            spread_tol: self.tol,
            seed: self.seed,
            ..FitOptions::default()
        })
    }
}

fn fit_status(fit: &FitResult) -> Result<()> {
    match fit.status {
        FitStatus::Converged => Ok(()),
        s => Err(CliError::NotConverged(format!("{} fit status: {}", fit.family, s.name()))),
    }
}

fn ingest(a: IngestArgs, name: &str, argv: &[String]) -> Result<()> {
    let h = io::ingest(&a.path)?;
    eprintln!(
        "{} index cases, {} distinct counts, largest count {}",
        h.total(),
        h.entries().len(),
        h.max_detectees()
    );
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(h.digest());
    emit(a.out.as_deref(), &h.to_csv(), &m)
}

fn summary_line(fit: &FitResult) -> String {
    let e = &fit.estimates;
    let mut s = format!("{}: status {}, p = {:.4}", fit.family, fit.status.name(), e.p);
    if let Some(m) = e.mean_k {
        s.push_str(&format!(", E[K] = {m:.4}"));
    }
    if let Some(sh) = e.shape {
        let label = if fit.family == DegreeFamily::PowerLaw { "gamma" } else { "r" };
        s.push_str(&format!(", {label} = {sh:.4}"));
    }
    s.push_str(&format!(", ll = {:.4}, AIC = {:.3}", fit.ll_max, fit.aic));
    if let Some(w) = &fit.wald_ci {
        s.push_str(&format!("; p 95% CI ({:.4}, {:.4})", w.p.lower, w.p.upper));
    }
    if let Some(pr) = &fit.profile_ci_mean_k {
        s.push_str(&format!("; E[K] profile CI ({:.4}, {})", pr.lower, fmt_upper(pr.upper)));
    }
    if let Some(n) = &fit.wald_note {
        s.push_str(&format!(" [{n}]"));
    }
    s
}

fn fmt_upper(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "inf".into()
    }
}

fn fit(a: FitArgs, name: &str, argv: &[String]) -> Result<()> {
    let data = io::ingest(&a.data)?;
    let family = parse_family(&a.family)?;
    let mode = parse_mode(&a.settings.mode)?;
    let options = a.settings.options()?;
    let result = fit_mle(&data, family, a.r0, mode, &options)?;
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(data.digest());
    m.seed = Some(options.seed);
    emit(a.out.as_deref(), &result.to_report(), &m)?;
    eprintln!("{}", summary_line(&result));
    fit_status(&result)
}

struct CompareRow {
    family: DegreeFamily,
    fit: std::result::Result<FitResult, String>,
    gof: Option<GofReport>,
    note: Vec<String>,
}

fn fitted_pmf(fit: &FitResult) -> tracefit_core::Result<DetecteePmf> {
    let (params, model) = fit.model()?;
    detectee_pmf(&params, &model, fit.mode, None)
}

fn compare_row(data: &DetecteeHistogram, family: DegreeFamily, r0: f64, mode: TracingMode, options: &FitOptions) -> CompareRow {
    let mut note = Vec::new();
    let fit = fit_mle(data, family, r0, mode, options).map_err(|e| e.to_string());
    let gof = match &fit {
        Ok(f) => match fitted_pmf(f).and_then(|pmf| chi_square_gof(data, &pmf, f.n_params)) {
            Ok(g) => {
                note.extend(g.warnings.iter().cloned());
                Some(g)
            }
            Err(e) => {
                note.push(format!("chi-square: {e}"));
                None
            }
        },
        Err(e) => {
            note.push(e.clone());
            None
        }
    };
    if let Ok(f) = &fit {
        if let Some(n) = &f.wald_note {
            note.insert(0, n.clone());
        }
    }
    CompareRow { family, fit, gof, note }
}

const COMPARE_HEADER: [&str; 18] = [
    "family",
    "status",
    "p",
    "p_lower",
    "p_upper",
    "mean_k",
    "mean_k_lower",
    "mean_k_upper",
    "mean_k_ci",
    "shape",
    "shape_lower",
    "shape_upper",
    "ll_max",
    "aic",
    "chi2",
    "chi2_dof",
    "chi2_p_value",
    "note",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CompareRow {
    fn cells(&self) -> Vec<String> {
        let mut c = vec![self.family.name().to_string()];
        match &self.fit {
            Err(_) => {
                c.push("failed".into());
                c.extend(std::iter::repeat_n(String::new(), 15));
            }
            Ok(f) => {
                let e = &f.estimates;
                let w = f.wald_ci.as_ref();
                c.push(f.status.name().into());
                c.push(e.p.to_string());
                c.push(cell(w.map(|w| w.p.lower)));
                c.push(cell(w.map(|w| w.p.upper)));
                c.push(cell(e.mean_k));
                let (lo, hi, how) = match (w.and_then(|w| w.mean_k), &f.profile_ci_mean_k) {
                    (Some(i), _) => (Some(i.lower), Some(i.upper), "wald"),
                    (None, Some(pr)) => (Some(pr.lower), Some(pr.upper), "profile"),
                    _ => (None, None, ""),
                };
                c.extend([cell(lo), cell(hi), how.to_string()]);
                c.push(cell(e.shape));
                c.push(cell(w.and_then(|w| w.shape).map(|i| i.lower)));
                c.push(cell(w.and_then(|w| w.shape).map(|i| i.upper)));
                c.push(f.ll_max.to_string());
                c.push(f.aic.to_string());
                c.push(cell(self.gof.as_ref().map(|g| g.statistic)));
                c.push(self.gof.as_ref().map(|g| g.dof.to_string()).unwrap_or_default());
                c.push(cell(self.gof.as_ref().map(|g| g.p_value)));
            }
        }
        c.push(self.note.join("; "));
        c
    }

    fn text_cells(&self) -> Vec<String> {
        let short = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let ci = |i: Option<(f64, f64)>| {
            i.map(|(a, b)| format!("({a:.3}, {})", if b.is_finite() { format!("{b:.3}") } else { "inf".into() }))
                .unwrap_or_else(|| "-".into())
        };
        match &self.fit {
            Err(_) => {
                let mut c = vec![self.family.name().into(), "failed".into()];
                c.extend(std::iter::repeat_n("-".to_string(), 7));
                c
            }
            Ok(f) => {
                let e = &f.estimates;
                let w = f.wald_ci.as_ref();
                let mean_ci = w
                    .and_then(|w| w.mean_k)
                    .map(|i| (i.lower, i.upper))
                    .or(f.profile_ci_mean_k.map(|p| (p.lower, p.upper)));
                vec![
                    self.family.name().into(),
                    f.status.name().into(),
                    short(Some(e.p)),
                    ci(w.map(|w| (w.p.lower, w.p.upper))),
                    short(e.mean_k),
                    ci(mean_ci),
                    short(e.shape),
                    format!("{:.2}", f.aic),
                    self.gof.as_ref().map(|g| format!("{:.3e}", g.p_value)).unwrap_or_else(|| "-".into()),
                ]
            }
        }
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(j, c)| format!("{c:<w$}", w = widths[j])).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn compare(a: CompareArgs, name: &str, argv: &[String]) -> Result<()> {
    let data = io::ingest(&a.data)?;
    let mode = parse_mode(&a.settings.mode)?;
    let options = a.settings.options()?;
    let families: Vec<DegreeFamily> = if a.families.trim() == "all" {
        DegreeFamily::ALL.to_vec()
    } else {
        let mut v = Vec::new();
        for f in a.families.split(',') {
            let f = parse_family(f)?;
            if !v.contains(&f) {
                v.push(f);
            }
        }
        v
    };
    let mut rows: Vec<CompareRow> = families
        .par_iter()
        .map(|&f| compare_row(&data, f, a.r0, mode, &options))
        .collect();
    // failed rows sort last, in request order
    rows.sort_by(|x, y| {
        let key = |r: &CompareRow| r.fit.as_ref().map(|f| f.aic).unwrap_or(f64::INFINITY);
        key(x).total_cmp(&key(y))
    });
    let csv_rows: Vec<Vec<String>> = rows.iter().map(CompareRow::cells).collect();
    let text = to_csv(&COMPARE_HEADER, &csv_rows)?;
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(data.digest());
    m.seed = Some(options.seed);
    let mut table = vec![["family", "status", "p", "p 95% CI", "E[K]", "E[K] 95% CI", "shape", "AIC", "chi2 p"]
        .map(String::from)
        .to_vec()];
    table.extend(rows.iter().map(CompareRow::text_cells));
    match a.out.as_deref() {
        Some(path) => {
            emit(Some(path), &text, &m)?;
            print!("{}", aligned(&table));
        }
        None => print!("{text}"),
    }
    for r in &rows {
        if !r.note.is_empty() {
            eprintln!("{}: {}", r.family, r.note.join("; "));
        }
    }
    Ok(())
}

fn sensitivity(a: SensitivityArgs, name: &str, argv: &[String]) -> Result<()> {
    let grid = specs::parse_grid(&a.r0_grid).map_err(usage)?;
    let data = io::ingest(&a.data)?;
    let family = parse_family(&a.family)?;
    let mode = parse_mode(&a.settings.mode)?;
    let options = a.settings.options()?;
    let fits: Vec<tracefit_core::Result<FitResult>> =
        grid.par_iter().map(|&r0| fit_mle(&data, family, r0, mode, &options)).collect();
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&fits)
        .map(|(r0, f)| match f {
            Ok(f) => vec![
                r0.to_string(),
                f.status.name().into(),
                f.estimates.p.to_string(),
                cell(f.estimates.mean_k),
                cell(f.estimates.shape),
                f.ll_max.to_string(),
                f.aic.to_string(),
                f.wald_note.clone().unwrap_or_default(),
            ],
            Err(e) => {
                let mut r = vec![r0.to_string(), "failed".into()];
                r.extend(std::iter::repeat_n(String::new(), 5));
                r.push(e.to_string());
                r
            }
        })
        .collect();
    let text = to_csv(&["r0", "status", "p", "mean_k", "shape", "ll_max", "aic", "note"], &rows)?;
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(data.digest());
    m.seed = Some(options.seed);
    emit(a.out.as_deref(), &text, &m)?;
    let ps: Vec<f64> = fits.iter().flatten().map(|f| f.estimates.p).collect();
    if let (Some(lo), Some(hi)) = (
        ps.iter().copied().reduce(f64::min),
        ps.iter().copied().reduce(f64::max),
    ) {
        eprintln!("{family}: p ranges over [{lo:.4}, {hi:.4}] across {} grid points", ps.len());
    }
    Ok(())
}

fn simulation_config(a: &SimulateArgs) -> Result<SimConfig> {
    let params = EpidemicParams::new(a.beta, a.alpha, a.sigma, a.p)?;
    let degree = specs::parse_degree(&a.degree).map_err(usage)?;
    let graph = specs::parse_graph(&a.graph).map_err(usage)?;
    let mode = parse_mode(&a.mode)?;
    let window = match &a.window {
        Some(w) => specs::parse_window(w).map_err(usage)?,
        None => (0.0, f64::INFINITY),
    };
    if a.replicates == 0 {
        return Err(usage("--replicates must be at least 1"));
    }
    let max_infected = a.max_infected.or(match graph {
        GraphKind::Tree => Some(DEFAULT_MAX_INFECTED),
        GraphKind::Configuration { n_nodes } => Some(n_nodes),
    });
    let config = SimConfig {
        params,
        degree,
        graph,
        mode,
        stop: StopCriteria {
            max_infected_ever: max_infected,
            max_index_cases: a.max_index_cases,
            max_time: a.max_time,
        },
        window,
        seed: a.seed,
    };
    config.validate()?;
    Ok(config)
}

fn simulate(a: SimulateArgs, name: &str, argv: &[String]) -> Result<()> {
    let config = simulation_config(&a)?;
    let outcomes: Vec<SimOutcome> = (0..a.replicates)
        .into_par_iter()
        .map(|s| simulate_stream(&config, s))
        .collect::<tracefit_core::Result<_>>()?;
    let n_records: usize = outcomes.iter().map(|o| o.records.len()).sum();
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.seed = Some(a.seed);
    if let Some(path) = &a.records {
        let mut text = format!("replicate,{RECORDS_HEADER}\n");
        for (rep, o) in outcomes.iter().enumerate() {
            for line in records_to_csv(&o.records).lines().skip(1) {
                text.push_str(&format!("{rep},{line}\n"));
            }
        }
        emit(Some(path), &text, &m)?;
    }
    let mut summary = format!("{} replicate(s), {n_records} index cases", a.replicates);
    let outside: Vec<(f64, usize)> = outcomes
        .iter()
        .filter_map(|o| o.outside_fraction.map(|f| (f, o.records.len())))
        .collect();
    if !outside.is_empty() && n_records > 0 {
        let hits: f64 = outside.iter().map(|&(f, n)| f * n as f64).sum();
        summary.push_str(&format!(", outside fraction {:.4}", hits / n_records as f64));
    }
    let stops: Vec<String> = outcomes.iter().map(|o| format!("{:?}", o.stop_reason)).collect();
    summary.push_str(&format!(", stop: {}", stops.join(" ")));
    eprintln!("{summary}");
    let text = if n_records == 0 {
        eprintln!("warning: no index cases were recorded");
        "detectees,frequency\n".to_string()
    } else {
        let all: Vec<_> = outcomes.iter().flat_map(|o| o.records.iter().copied()).collect();
        records_to_histogram(&all, config.mode)?.to_csv()
    };
    if a.histogram.is_some() || a.records.is_none() {
        emit(a.histogram.as_deref(), &text, &m)?;
    }
    Ok(())
}

struct ResolvedModel {
    params: EpidemicParams,
    model: DegreeModel,
    mode: TracingMode,
    n_params: usize,
}

fn resolve_model(a: &ModelArgs) -> Result<ResolvedModel> {
    if let Some(path) = &a.fit {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let fit = FitResult::from_report(&text)?;
        let (params, model) = fit.model()?;
        let mode = match &a.mode {
            Some(m) => parse_mode(m)?,
            None => fit.mode,
        };
        let params = match a.p {
            Some(p) => params.with_p(p)?,
            None => params,
        };
        return Ok(ResolvedModel { params, model, mode, n_params: fit.n_params });
    }
    let degree = a.degree.as_deref().ok_or_else(|| usage("give --fit or --degree"))?;
    let model = specs::parse_degree(degree).map_err(usage)?;
    let p = a.p.ok_or_else(|| usage("--p is required with --degree"))?;
    let params = match (a.r0, a.beta) {
        (Some(r0), _) if model == DegreeModel::RandomMixingLimit => EpidemicParams::new(r0, 0.5, 0.5, p)?,
        (Some(r0), _) => nondimensionalize(r0, model.mean(), p)?,
        (None, Some(beta)) => EpidemicParams::new(beta, a.alpha, a.sigma, p)?,
        (None, None) => return Err(usage("give --r0 or --beta with --degree")),
    };
    let mode = parse_mode(a.mode.as_deref().unwrap_or("forward"))?;
    Ok(ResolvedModel { n_params: model.family().n_params(), params, model, mode })
}

fn model_digest(a: &ModelArgs) -> Option<String> {
    a.fit.as_ref().and_then(|p| fs::read(p).ok()).map(|bytes| content_digest(&bytes))
}

fn pmf(a: PmfArgs, name: &str, argv: &[String]) -> Result<()> {
    let r = resolve_model(&a.model)?;
    let pmf = detectee_pmf(&r.params, &r.model, r.mode, a.imax)?;
    let mut text = String::from("i,probability\n");
    for (i, p) in pmf.probs.iter().enumerate() {
        text.push_str(&format!("{i},{p}\n"));
    }
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = model_digest(&a.model);
    emit(a.out.as_deref(), &text, &m)?;
    eprintln!("i = 0..{}, mass beyond {:e}", pmf.i_max(), pmf.tail);
    Ok(())
}

fn gof(a: GofArgs, name: &str, argv: &[String]) -> Result<()> {
    let data = io::ingest(&a.data)?;
    let r = resolve_model(&a.model)?;
    let pmf = detectee_pmf(&r.params, &r.model, r.mode, None)?;
    let report = chi_square_gof(&data, &pmf, a.n_params.unwrap_or(r.n_params))?;
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(data.digest());
    emit(a.out.as_deref(), &report.to_csv(), &m)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("chi2 = {:.4}, dof = {}, p-value = {:.4e}", report.statistic, report.dof, report.p_value);
    Ok(())
}

fn cdf(a: CdfArgs, name: &str, argv: &[String]) -> Result<()> {
    let data = io::ingest(&a.data)?;
    let r = resolve_model(&a.model)?;
    let pmf = detectee_pmf(&r.params, &r.model, r.mode, None)?;
    let rows = cumulative_compare(&data, &pmf);
    let mut m = RunManifest::new(name, argv, options_of(&a));
    m.input_digest = Some(data.digest());
    emit(a.out.as_deref(), &cdf_csv(&rows), &m)
}

fn rerun(a: RerunArgs) -> Result<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let args = std::iter::once("tracefit".to_string()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(args).map_err(|e| usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(usage("a manifest cannot name another rerun"));
    }
    if cli.command.name() != manifest.command {
        return Err(usage(format!(
            "manifest command `{}` does not match its arguments",
            manifest.command
        )));
    }
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, running {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    run(cli.command, &manifest.argv)
}
