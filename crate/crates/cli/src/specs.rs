//! Parsers for compound flag values such as `poisson:4` or `2:5:0.5`.

use tracefit_core::simulator::GraphKind;
use tracefit_core::DegreeModel;

fn num(s: &str, what: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("{what}: `{s}` is not a number"))
}

fn count(s: &str, what: &str) -> Result<u32, String> {
    s.trim()
        .parse::<u32>()
        .map_err(|_| format!("{what}: `{s}` is not a non-negative integer"))
}

/// `fixed:K`, `poisson:MEAN`, `geometric:MEAN`, `powerlaw:GAMMA[:KMAX]`,
/// `negbinom:R:MEAN` or `randommix`.
pub fn parse_degree(s: &str) -> Result<DegreeModel, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let model = match parts.as_slice() {
        ["fixed", k] => DegreeModel::fixed(count(k, "fixed degree")?),
        ["poisson", m] => DegreeModel::poisson(num(m, "poisson mean")?),
        ["geometric", m] => DegreeModel::geometric(num(m, "geometric mean")?),
        ["powerlaw", g] => DegreeModel::power_law(
            num(g, "power-law exponent")?,
            tracefit_core::inference::FIT_POWER_LAW_KMAX,
        ),
        ["powerlaw", g, k] => DegreeModel::power_law(num(g, "power-law exponent")?, count(k, "power-law k_max")?),
        ["negbinom", r, m] => DegreeModel::neg_binomial(num(r, "negative binomial shape")?, num(m, "negative binomial mean")?),
        ["randommix"] => Ok(DegreeModel::RandomMixingLimit),
        _ => {
            return Err(format!(
                "unrecognised degree `{s}`; expected fixed:K, poisson:MEAN, geometric:MEAN, \
                 powerlaw:GAMMA[:KMAX], negbinom:R:MEAN or randommix"
            ))
        }
    };
    model.map_err(|e| e.to_string())
}

/// `tree` or `config:N`.
pub fn parse_graph(s: &str) -> Result<GraphKind, String> {
    match s.split_once(':') {
        None if s == "tree" => Ok(GraphKind::Tree),
        Some(("config", n)) => {
            let n_nodes = n
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("graph size `{n}` is not a positive integer"))?;
            if n_nodes < 2 {
                return Err("a configuration graph needs at least 2 nodes".into());
            }
            Ok(GraphKind::Configuration { n_nodes })
        }
        _ => Err(format!("unrecognised graph `{s}`; expected tree or config:N")),
    }
}

/// `t0:t1`; `t1` may be `inf`.
pub fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("window `{s}` must be t0:t1"))?;
    let (t0, t1) = (num(a, "window start")?, num(b, "window end")?);
    if !(t0 >= 0.0 && t0 < t1) {
        return Err(format!("window `{s}` must satisfy 0 <= t0 < t1"));
    }
    Ok((t0, t1))
}

/// Inclusive grid `lo:hi:step`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(format!("grid `{s}` must be lo:hi:step"));
    };
    let (lo, hi, step) = (num(lo, "grid start")?, num(hi, "grid end")?, num(step, "grid step")?);
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(format!("grid `{s}` needs finite lo <= hi"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(format!("grid step must be positive, got {step}"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err(format!("grid `{s}` has too many points"));
    }
    Ok((0..=n).map(|j| lo + j as f64 * step).collect())
}
