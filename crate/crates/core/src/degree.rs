//! Downstream-degree distributions of the rooted random tree.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default truncation of the power-law support.
pub const DEFAULT_POWER_LAW_KMAX: u32 = 500;

/// Family tag used when fitting; the numeric parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DegreeFamily {
    RandomMixing,
    Fixed,
    Poisson,
    Geometric,
    PowerLaw,
    NegBinomial,
}

impl DegreeFamily {
    pub const ALL: [DegreeFamily; 6] = [
        DegreeFamily::RandomMixing,
        DegreeFamily::Fixed,
        DegreeFamily::Poisson,
        DegreeFamily::Geometric,
        DegreeFamily::PowerLaw,
        DegreeFamily::NegBinomial,
    ];

    /// Number of estimated parameters, including the tracing probability.
    pub fn n_params(self) -> usize {
        match self {
            DegreeFamily::RandomMixing => 1,
            DegreeFamily::NegBinomial => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DegreeFamily::RandomMixing => "randommix",
            DegreeFamily::Fixed => "fixed",
            DegreeFamily::Poisson => "poisson",
            DegreeFamily::Geometric => "geometric",
            DegreeFamily::PowerLaw => "powerlaw",
            DegreeFamily::NegBinomial => "negbinom",
        }
    }
}

impl fmt::Display for DegreeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegreeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "randommix" | "random-mixing" | "randommixing" => Ok(DegreeFamily::RandomMixing),
            "fixed" => Ok(DegreeFamily::Fixed),
            "poisson" => Ok(DegreeFamily::Poisson),
            "geometric" => Ok(DegreeFamily::Geometric),
            "powerlaw" | "power-law" => Ok(DegreeFamily::PowerLaw),
            "negbinom" | "negbin" | "negative-binomial" => Ok(DegreeFamily::NegBinomial),
            other => Err(Error::Parse(format!("unknown degree family `{other}`"))),
        }
    }
}

/// Distribution of the downstream degree K.
///
/// Construct through the checked constructors; a constructed model is always
/// valid, so queries never fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DegreeModel {
    Fixed { k: u32 },
    Poisson { mean: f64 },
    /// Support `0, 1, 2, ...` with pmf `(1 - q) q^k`.
    Geometric { mean: f64 },
    /// Support `1..=k_max` with pmf proportional to `k^-gamma`.
    PowerLaw {
        gamma: f64,
        k_max: u32,
        #[serde(skip)]
        norm: f64,
        #[serde(skip)]
        mean: f64,
    },
    /// Shape `r`, mean `mean`; variance `mean + mean^2 / r`.
    NegBinomial { r: f64, mean: f64 },
    /// Full-graph limit: no degree, the aggregate contact rate is carried by
    /// `EpidemicParams::beta`.
    RandomMixingLimit,
}

impl DegreeModel {
    pub fn fixed(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("fixed degree must be at least 1".into()));
        }
        Ok(DegreeModel::Fixed { k })
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        check_positive("poisson mean", mean)?;
        Ok(DegreeModel::Poisson { mean })
    }

    pub fn geometric(mean: f64) -> Result<Self> {
        check_positive("geometric mean", mean)?;
        Ok(DegreeModel::Geometric { mean })
    }

    pub fn power_law(gamma: f64, k_max: u32) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidModel(format!(
                "power-law exponent must exceed 1, got {gamma}"
            )));
        }
        if k_max == 0 {
            return Err(Error::InvalidModel("power-law k_max must be at least 1".into()));
        }
        let mut norm = 0.0;
        let mut first = 0.0;
        // smallest terms first
        for k in (1..=k_max).rev() {
            let w = (k as f64).powf(-gamma);
            norm += w;
            first += k as f64 * w;
        }
        Ok(DegreeModel::PowerLaw {
            gamma,
            k_max,
            norm,
            mean: first / norm,
        })
    }

    pub fn neg_binomial(r: f64, mean: f64) -> Result<Self> {
        check_positive("negative binomial shape", r)?;
        check_positive("negative binomial mean", mean)?;
        Ok(DegreeModel::NegBinomial { r, mean })
    }

    pub fn family(&self) -> DegreeFamily {
        match self {
            DegreeModel::Fixed { .. } => DegreeFamily::Fixed,
            DegreeModel::Poisson { .. } => DegreeFamily::Poisson,
            DegreeModel::Geometric { .. } => DegreeFamily::Geometric,
            DegreeModel::PowerLaw { .. } => DegreeFamily::PowerLaw,
            DegreeModel::NegBinomial { .. } => DegreeFamily::NegBinomial,
            DegreeModel::RandomMixingLimit => DegreeFamily::RandomMixing,
        }
    }

    pub fn pmf(&self, k: u32) -> f64 {
        let kf = k as f64;
        match *self {
            DegreeModel::Fixed { k: k0 } => {
                if k == k0 {
                    1.0
                } else {
                    0.0
                }
            }
            DegreeModel::Poisson { mean } => {
                (kf * mean.ln() - mean - ln_gamma(kf + 1.0)).exp()
            }
            DegreeModel::Geometric { mean } => {
                let q = mean / (1.0 + mean);
                (1.0 - q) * q.powi(k as i32)
            }
            DegreeModel::PowerLaw {
                gamma, k_max, norm, ..
            } => {
                if k == 0 || k > k_max {
                    0.0
                } else {
                    kf.powf(-gamma) / norm
                }
            }
            DegreeModel::NegBinomial { r, mean } => neg_binomial_pmf(k, r, mean),
            DegreeModel::RandomMixingLimit => 0.0,
        }
    }

    /// Mean of the (truncated) distribution. Infinite for the random-mixing limit.
    pub fn mean(&self) -> f64 {
        match *self {
            DegreeModel::Fixed { k } => k as f64,
            DegreeModel::Poisson { mean }
            | DegreeModel::Geometric { mean }
            | DegreeModel::NegBinomial { mean, .. } => mean,
            DegreeModel::PowerLaw { mean, .. } => mean,
            DegreeModel::RandomMixingLimit => f64::INFINITY,
        }
    }

    /// Smallest support point of the distribution.
    pub fn support_lower(&self) -> u32 {
        match *self {
            DegreeModel::Fixed { k } => k,
            DegreeModel::PowerLaw { .. } => 1,
            _ => 0,
        }
    }

    /// Smallest `K*` with `P(K > K*) <= tail_tol`.
    ///
    /// Returns `k` for `Fixed`, `k_max` for `PowerLaw` and `u32::MAX` for the
    /// random-mixing limit, which has no degree.
    pub fn support_upper(&self, tail_tol: f64) -> u32 {
        assert!(tail_tol > 0.0 && tail_tol < 1.0, "tail_tol must lie in (0, 1)");
        match *self {
            DegreeModel::Fixed { k } => k,
            DegreeModel::PowerLaw { k_max, .. } => k_max,
            DegreeModel::RandomMixingLimit => u32::MAX,
            DegreeModel::Geometric { mean } => {
                // P(K > K*) = q^(K*+1)
                let q = mean / (1.0 + mean);
                let n = (tail_tol.ln() / q.ln()).ceil();
                let mut k = (n - 1.0).max(0.0) as u32;
                while k > 0 && q.powi(k as i32) <= tail_tol {
                    k -= 1;
                }
                while q.powi(k as i32 + 1) > tail_tol {
                    k += 1;
                }
                k
            }
            DegreeModel::Poisson { .. } | DegreeModel::NegBinomial { .. } => {
                let mut cdf = KahanSum::default();
                let mut k = 0u32;
                loop {
                    cdf.add(self.pmf(k));
                    // 1 - cdf stalls at rounding level, so past the mode also
                    // use the geometric bound pmf(k+1) / (1 - sup ratio).
                    let next = self.pmf(k + 1);
                    let ratio = match *self {
                        DegreeModel::Poisson { mean } => mean / (k as f64 + 2.0),
                        DegreeModel::NegBinomial { r, mean } => {
                            let lim = mean / (r + mean);
                            let here = (k as f64 + 1.0 + r) / (k as f64 + 2.0) * lim;
                            here.max(lim)
                        }
                        _ => unreachable!(),
                    };
                    let mut tail = 1.0 - cdf.value();
                    if ratio < 1.0 {
                        tail = tail.min(next / (1.0 - ratio));
                    }
                    if tail <= tail_tol {
                        return k;
                    }
                    k += 1;
                }
            }
        }
    }

    /// Probability table `pmf(0..=upper)`.
    pub fn pmf_table(&self, upper: u32) -> Vec<f64> {
        (0..=upper).map(|k| self.pmf(k)).collect()
    }

    /// Variance computed from the truncated pmf.
    pub fn variance_numeric(&self, tail_tol: f64) -> f64 {
        let upper = self.support_upper(tail_tol);
        let mean = self.mean();
        (0..=upper)
            .map(|k| {
                let d = k as f64 - mean;
                d * d * self.pmf(k)
            })
            .sum()
    }

    /// Inverse-CDF sampler over the support up to `P(K > K*) <= 1e-14`.
    pub fn sampler(&self) -> Result<DegreeSampler> {
        if let DegreeModel::RandomMixingLimit = self {
            return Err(Error::InvalidModel(
                "the random-mixing limit has no samplable degree".into(),
            ));
        }
        let upper = self.support_upper(1e-14);
        let mut cdf = Vec::with_capacity(upper as usize + 1);
        let mut acc = KahanSum::default();
        for k in 0..=upper {
            acc.add(self.pmf(k));
            cdf.push(acc.value());
        }
        Ok(DegreeSampler { cdf })
    }
}

impl fmt::Display for DegreeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DegreeModel::Fixed { k } => write!(f, "fixed:{k}"),
            DegreeModel::Poisson { mean } => write!(f, "poisson:{mean}"),
            DegreeModel::Geometric { mean } => write!(f, "geometric:{mean}"),
            DegreeModel::PowerLaw { gamma, k_max, .. } => write!(f, "powerlaw:{gamma}:{k_max}"),
            DegreeModel::NegBinomial { r, mean } => write!(f, "negbinom:{r}:{mean}"),
            DegreeModel::RandomMixingLimit => write!(f, "randommix"),
        }
    }
}

/// Parses the textual model syntax: `fixed:4`, `poisson:4`, `geometric:16.6`,
/// `powerlaw:1.48:500` (k_max optional), `negbinom:0.16:4.5`, `randommix`.
impl FromStr for DegreeModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Parse(format!("`{s}`: missing parameter {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
        };
        let arity = |n: usize| -> Result<()> {
            if parts.len() > n + 1 {
                Err(Error::Parse(format!("`{s}`: too many parameters")))
            } else {
                Ok(())
            }
        };
        match parts[0].to_ascii_lowercase().as_str() {
            "fixed" => {
                arity(1)?;
                let k = parts
                    .get(1)
                    .ok_or_else(|| Error::Parse(format!("`{s}`: missing degree")))?
                    .parse::<u32>()
                    .map_err(|e| Error::Parse(format!("`{s}`: {e}")))?;
                DegreeModel::fixed(k)
            }
            "poisson" => {
                arity(1)?;
                DegreeModel::poisson(num(1)?)
            }
            "geometric" => {
                arity(1)?;
                DegreeModel::geometric(num(1)?)
            }
            "powerlaw" => {
                arity(2)?;
                let k_max = match parts.get(2) {
                    Some(v) => v
                        .parse::<u32>()
                        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))?,
                    None => DEFAULT_POWER_LAW_KMAX,
                };
                DegreeModel::power_law(num(1)?, k_max)
            }
            "negbinom" => {
                arity(2)?;
                DegreeModel::neg_binomial(num(1)?, num(2)?)
            }
            "randommix" => {
                arity(0)?;
                Ok(DegreeModel::RandomMixingLimit)
            }
            other => Err(Error::Parse(format!("unknown degree model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DegreeSampler {
    cdf: Vec<f64>,
}

impl DegreeSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random::<f64>() * self.cdf.last().copied().unwrap_or(1.0);
        self.cdf.partition_point(|&c| c <= u) as u32
    }
}

/// Negative binomial pmf with shape `r` and mean `mean`.
pub fn neg_binomial_pmf(k: u32, r: f64, mean: f64) -> f64 {
    let kf = k as f64;
    let log_p = (r / (r + mean)).ln();
    let log_q = (mean / (r + mean)).ln();
    let lp = ln_gamma(kf + r) - ln_gamma(r) - ln_gamma(kf + 1.0) + r * log_p + kf * log_q;
    lp.exp()
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{what} must be positive, got {v}")))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}
