//! Model comparison: AIC, a binned chi-square goodness-of-fit test and
//! empirical versus theoretical cumulative distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::inference::DetecteeHistogram;
use crate::mixture::DetecteePmf;

/// Expected counts below this are refused.
pub const MIN_EXPECTED_HARD: f64 = 1.0;
/// Expected counts below this produce a warning.
pub const MIN_EXPECTED_SOFT: f64 = 5.0;

pub fn aic(ll: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 - 2.0 * ll
}

/// Inclusive range of detectee counts; `hi = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl Bin {
    pub fn label(&self) -> String {
        match self.hi {
            Some(h) if h == self.lo => format!("{}", self.lo),
            Some(h) => format!("{}-{}", self.lo, h),
            None => format!(">{}", self.lo.saturating_sub(1)),
        }
    }

    fn contains(&self, i: u32) -> bool {
        i >= self.lo && self.hi.is_none_or(|h| i <= h)
    }
}

/// `{0}, {1}, {2}, {3}, {4}, {5-7}, {>7}`.
pub fn default_bins() -> Vec<Bin> {
    let mut bins: Vec<Bin> = (0..=4).map(|i| Bin { lo: i, hi: Some(i) }).collect();
    bins.push(Bin { lo: 5, hi: Some(7) });
    bins.push(Bin { lo: 8, hi: None });
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofBin {
    pub label: String,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub bins: Vec<GofBin>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub warnings: Vec<String>,
}

impl GofReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,observed,expected\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{}\n", b.label, b.observed, b.expected));
        }
        s
    }
}

/// Chi-square test with the default bins.
pub fn chi_square_gof(data: &DetecteeHistogram, pmf: &DetecteePmf, n_params: usize) -> Result<GofReport> {
    chi_square_gof_with(data, pmf, n_params, &default_bins())
}

/// Chi-square test on contiguous `bins`; the last bin must be open-ended and
/// collects the pmf tail beyond its support.
pub fn chi_square_gof_with(
    data: &DetecteeHistogram,
    pmf: &DetecteePmf,
    n_params: usize,
    bins: &[Bin],
) -> Result<GofReport> {
    let contiguous = bins.first().is_some_and(|b| b.lo == 0)
        && bins.windows(2).all(|w| w[0].hi.is_some_and(|h| h + 1 == w[1].lo))
        && bins.last().is_some_and(|b| b.hi.is_none());
    if !contiguous {
        return Err(Error::Binning("bins must tile 0.. and end open-ended".into()));
    }
    if bins.len() < n_params + 2 {
        return Err(Error::Binning(format!(
            "{} bins leave no degrees of freedom for {n_params} fitted parameters",
            bins.len()
        )));
    }
    let n = data.total() as f64;
    let mut out = Vec::with_capacity(bins.len());
    let mut covered = 0.0f64;
    for (idx, bin) in bins.iter().enumerate() {
        let observed = data
            .entries()
            .iter()
            .filter(|&&(i, _)| bin.contains(i))
            .map(|&(_, c)| c)
            .sum();
        let mass = if idx + 1 == bins.len() {
            (1.0 - covered).max(0.0)
        } else {
            let hi = bin.hi.unwrap();
            (bin.lo..=hi).map(|i| pmf.prob(i as usize)).sum::<f64>()
        };
        covered += mass;
        out.push(GofBin {
            label: bin.label(),
            observed,
            expected: n * mass,
        });
    }
    let mut warnings = Vec::new();
    for b in &out {
        if b.expected < MIN_EXPECTED_HARD {
            return Err(Error::Binning(format!(
                "expected count {:.3} in bin {} is below {MIN_EXPECTED_HARD}; use coarser bins",
                b.expected, b.label
            )));
        }
        if b.expected < MIN_EXPECTED_SOFT {
            warnings.push(format!("expected count {:.3} in bin {} is below {MIN_EXPECTED_SOFT}", b.expected, b.label));
        }
    }
    let statistic: f64 = out
        .iter()
        .map(|b| {
            let d = b.observed as f64 - b.expected;
            d * d / b.expected
        })
        .sum();
    let dof = bins.len() - 1 - n_params;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Binning(e.to_string()))?;
    Ok(GofReport {
        bins: out,
        statistic,
        dof,
        p_value: dist.sf(statistic).clamp(0.0, 1.0),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub i: u32,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Empirical and theoretical CDFs at `0..=max(observed max, pmf support)`.
pub fn cumulative_compare(data: &DetecteeHistogram, pmf: &DetecteePmf) -> Vec<CdfRow> {
    let top = (data.max_detectees() as usize).max(pmf.i_max());
    let n = data.total();
    let mut seen = 0u64;
    let mut theory = 0.0;
    (0..=top)
        .map(|i| {
            seen += data.count(i as u32);
            theory += pmf.prob(i);
            CdfRow {
                i: i as u32,
                // exact ratio so the last row is exactly 1
                empirical: seen as f64 / n as f64,
                theoretical: theory.min(1.0),
            }
        })
        .collect()
}

pub fn cdf_csv(rows: &[CdfRow]) -> String {
    let mut s = String::from("i,empirical,theoretical\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.i, r.empirical, r.theoretical));
    }
    s
}
