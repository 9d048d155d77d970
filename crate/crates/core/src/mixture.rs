//! Distribution of the number of detectees per index case.
//!
//! Conditional on the age `a` of the index case at diagnosis, each of the `k`
//! downstream contacts is independently infected and traced with probability
//! `q(a) = edge_trace_prob(a)`, so forward detectees are `Binomial(k, q(a))`.
//! Under full tracing the infector adds one detectee with probability
//! `p * P(infector alive at a)`. Both are averaged over the index-case age
//! density and, for a random tree, over the degree distribution.
//!
//! Averaging over the degree is available two ways. [`MixtureRoute::DirectSum`]
//! sums `P(K = k) Binomial(k, q)` over a truncated support and works for every
//! family. [`MixtureRoute::Auto`] uses the fact that binomial thinning maps
//! Poisson, geometric and negative binomial degrees onto the same family with
//! mean scaled by `q`, which is exact and needs no truncation; power-law and
//! fixed degrees still go through the direct sum.

use serde::{Deserialize, Serialize};

use crate::degree::DegreeModel;
use crate::error::{Error, Result};
use crate::kernels::{edge_trace_prob, growth_summary, infector_alive_prob, EpidemicParams};
use crate::quadrature::{
    integrate_fixed_panels_vec, integrate_semi_infinite, integrate_semi_infinite_vec,
    IntegrationSpec, PMF_ABS_TOL,
};

/// Stop growing the default support once the remaining mass is below this.
pub const DEFAULT_TAIL_MASS: f64 = 1e-9;
const MAX_DEFAULT_IMAX: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TracingMode {
    /// One-step forward tracing of downstream contacts only.
    ForwardOnly,
    /// Forward tracing plus backward tracing of the infector.
    Full,
}

impl TracingMode {
    pub fn name(self) -> &'static str {
        match self {
            TracingMode::ForwardOnly => "forward",
            TracingMode::Full => "full",
        }
    }
}

impl std::str::FromStr for TracingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" | "forwardonly" | "forward-only" => Ok(TracingMode::ForwardOnly),
            "full" => Ok(TracingMode::Full),
            other => Err(Error::Parse(format!("unknown tracing mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TracingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureRoute {
    /// Closed-form thinning where the family allows it, direct sum otherwise.
    Auto,
    /// Always sum over the truncated degree support.
    DirectSum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgeQuadrature {
    /// Globally adaptive Gauss-Kronrod with the given absolute tolerance.
    Adaptive { abs_tol: f64 },
    /// Fixed composite rule; smooth in the model parameters.
    FixedPanels { panels_per_halving: usize, tail: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfOptions {
    pub route: MixtureRoute,
    pub quadrature: AgeQuadrature,
    /// Degree mass dropped by the direct sum.
    pub degree_tail_tol: f64,
}

impl Default for PmfOptions {
    fn default() -> Self {
        Self {
            route: MixtureRoute::Auto,
            quadrature: AgeQuadrature::Adaptive {
                abs_tol: PMF_ABS_TOL,
            },
            degree_tail_tol: 1e-13,
        }
    }
}

impl PmfOptions {
    /// Options used by the likelihood: fixed panels so that finite-difference
    /// derivatives see a smooth objective.
    pub fn likelihood() -> Self {
        Self {
            quadrature: AgeQuadrature::FixedPanels {
                panels_per_halving: 2,
                tail: 1e-14,
            },
            ..Self::default()
        }
    }
}

/// `P(i)` for `i = 0..=i_max` plus the mass beyond `i_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetecteePmf {
    pub probs: Vec<f64>,
    pub tail: f64,
    pub mode: TracingMode,
    pub params: EpidemicParams,
    pub model: DegreeModel,
}

impl DetecteePmf {
    pub fn i_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P(i)`; zero beyond `i_max` (that mass lives in `tail`).
    pub fn prob(&self, i: usize) -> f64 {
        self.probs.get(i).copied().unwrap_or(0.0)
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail
    }
}

/// Binomial `(k, q(a))` mass at `i`; zero for `i > k`.
pub fn forward_pmf_given_age(i: i64, a: f64, k: u32, params: &EpidemicParams) -> f64 {
    if i < 0 || i > k as i64 {
        return 0.0;
    }
    binomial_pmf(i as u32, k, edge_trace_prob(a, params))
}

/// Forward-tracing detectee distribution for a fixed downstream degree `k`.
pub fn forward_pmf_fixed(i: i64, k: u32, params: &EpidemicParams) -> Result<f64> {
    if k <= 1 {
        return Err(Error::Subcritical { mean_k: k as f64 });
    }
    if i < 0 || i > k as i64 {
        return Ok(0.0);
    }
    let rate = params.beta * (k as f64 - 1.0);
    let spec = IntegrationSpec::new(rate, PMF_ABS_TOL)?;
    integrate_semi_infinite(
        |a| forward_pmf_given_age(i, a, k, params) * rate * (-rate * a).exp(),
        &spec,
    )
}

/// Full-tracing mass at `i` conditional on age `a` and degree `k`.
pub fn full_pmf_given_age(i: i64, a: f64, k: u32, params: &EpidemicParams) -> f64 {
    let back = params.p * infector_alive_prob(a, params);
    back * forward_pmf_given_age(i - 1, a, k, params)
        + (1.0 - back) * forward_pmf_given_age(i, a, k, params)
}

/// Rate of the index-case age density for `(params, model)`.
///
/// For the random-mixing limit `params.beta` is the aggregate contact rate and
/// the rate equals `R0 (alpha + sigma) = beta`.
pub fn age_density_rate(params: &EpidemicParams, model: &DegreeModel) -> Result<f64> {
    match model {
        DegreeModel::RandomMixingLimit => Ok(params.beta),
        _ => Ok(growth_summary(params, model.mean())?.phi_rate),
    }
}

/// Detectee distribution with default options; `i_max = None` picks the
/// smallest support leaving less than `1e-9` in the tail.
pub fn detectee_pmf(
    params: &EpidemicParams,
    model: &DegreeModel,
    mode: TracingMode,
    i_max: Option<usize>,
) -> Result<DetecteePmf> {
    detectee_pmf_with(params, model, mode, i_max, &PmfOptions::default())
}

pub fn detectee_pmf_with(
    params: &EpidemicParams,
    model: &DegreeModel,
    mode: TracingMode,
    i_max: Option<usize>,
    options: &PmfOptions,
) -> Result<DetecteePmf> {
    let plan = MixturePlan::new(params, model, options)?;
    let probs = match i_max {
        Some(n) => plan.integrate(mode, n, options)?,
        None => {
            let mut n = 32;
            loop {
                let probs = plan.integrate(mode, n, options)?;
                let mass: f64 = probs.iter().sum();
                if 1.0 - mass < DEFAULT_TAIL_MASS || n >= MAX_DEFAULT_IMAX {
                    break trim_support(probs);
                }
                n *= 2;
            }
        }
    };
    let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    Ok(DetecteePmf {
        probs,
        tail,
        mode,
        params: *params,
        model: model.clone(),
    })
}

/// Drops trailing entries while the discarded mass stays below the tail budget.
fn trim_support(mut probs: Vec<f64>) -> Vec<f64> {
    let mass: f64 = probs.iter().sum();
    let mut tail = (1.0 - mass).max(0.0);
    while probs.len() > 1 {
        let last = *probs.last().unwrap();
        if tail + last >= DEFAULT_TAIL_MASS {
            break;
        }
        tail += last;
        probs.pop();
    }
    probs
}

enum Thinning {
    /// Degree-weighted sum of binomials over `first..first + weights.len()`.
    Direct { first: u32, weights: Vec<f64> },
    Poisson { mean: f64 },
    NegBinomial { r: f64, mean: f64 },
    /// Poisson with mean `p R0 (1 - exp(-(alpha + sigma) a))`.
    RandomMixing { r0: f64 },
}

struct MixturePlan {
    params: EpidemicParams,
    rate: f64,
    thinning: Thinning,
}

impl MixturePlan {
    fn new(params: &EpidemicParams, model: &DegreeModel, options: &PmfOptions) -> Result<Self> {
        if let DegreeModel::Fixed { k } = model {
            if *k <= 1 {
                return Err(Error::Subcritical { mean_k: *k as f64 });
            }
        }
        let rate = age_density_rate(params, model)?;
        let direct = || {
            let first = model.support_lower();
            let upper = model.support_upper(options.degree_tail_tol);
            let weights = (first..=upper).map(|k| model.pmf(k)).collect();
            Thinning::Direct { first, weights }
        };
        let thinning = match (options.route, model) {
            (_, DegreeModel::RandomMixingLimit) => Thinning::RandomMixing {
                r0: params.beta / params.removal_rate(),
            },
            (MixtureRoute::Auto, DegreeModel::Poisson { mean }) => Thinning::Poisson { mean: *mean },
            (MixtureRoute::Auto, DegreeModel::Geometric { mean }) => Thinning::NegBinomial {
                r: 1.0,
                mean: *mean,
            },
            (MixtureRoute::Auto, DegreeModel::NegBinomial { r, mean }) => Thinning::NegBinomial {
                r: *r,
                mean: *mean,
            },
            _ => direct(),
        };
        Ok(Self {
            params: *params,
            rate,
            thinning,
        })
    }

    /// Writes `P(detectees = i | a)` for `i = 0..out.len()`.
    fn conditional(&self, a: f64, mode: TracingMode, out: &mut [f64]) {
        let params = &self.params;
        let q = edge_trace_prob(a, params);
        match &self.thinning {
            Thinning::Direct { first, weights } => {
                for (j, &w) in weights.iter().enumerate() {
                    if w > 1e-300 {
                        add_binomial(*first + j as u32, q, w, out);
                    }
                }
            }
            Thinning::Poisson { mean } => poisson_into(q * mean, out),
            Thinning::NegBinomial { r, mean } => neg_binomial_into(*r, q * mean, out),
            Thinning::RandomMixing { r0 } => {
                let mu = params.p * r0 * (-(-params.removal_rate() * a).exp_m1());
                poisson_into(mu, out)
            }
        }
        if mode == TracingMode::Full {
            let back = params.p * infector_alive_prob(a, params);
            for i in (0..out.len()).rev() {
                let below = if i > 0 { out[i - 1] } else { 0.0 };
                out[i] = (1.0 - back) * out[i] + back * below;
            }
        }
    }

    fn integrate(&self, mode: TracingMode, i_max: usize, options: &PmfOptions) -> Result<Vec<f64>> {
        let dim = i_max + 1;
        let rate = self.rate;
        let f = |a: f64, out: &mut [f64]| {
            self.conditional(a, mode, out);
            let density = rate * (-rate * a).exp();
            out.iter_mut().for_each(|v| *v *= density);
        };
        let mut probs = match options.quadrature {
            AgeQuadrature::Adaptive { abs_tol } => {
                integrate_semi_infinite_vec(f, dim, &IntegrationSpec::new(rate, abs_tol)?)?
            }
            AgeQuadrature::FixedPanels {
                panels_per_halving,
                tail,
            } => integrate_fixed_panels_vec(f, dim, rate, panels_per_halving, tail)?,
        };
        probs.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(probs)
    }
}

pub(crate) fn binomial_pmf(i: u32, k: u32, q: f64) -> f64 {
    if i > k {
        return 0.0;
    }
    if q <= 0.0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    if q >= 1.0 {
        return if i == k { 1.0 } else { 0.0 };
    }
    let (kf, inf) = (k as f64, i as f64);
    let ln_choose = statrs::function::factorial::ln_binomial(k as u64, i as u64);
    (ln_choose + inf * q.ln() + (kf - inf) * (-q).ln_1p()).exp()
}

/// Adds `w * Binomial(k, q)` masses at `0..out.len()`.
fn add_binomial(k: u32, q: f64, w: f64, out: &mut [f64]) {
    if q <= 0.0 {
        out[0] += w;
        return;
    }
    let top = (k as usize).min(out.len() - 1);
    if q >= 1.0 {
        if (k as usize) < out.len() {
            out[k as usize] += w;
        }
        return;
    }
    let odds = q / (1.0 - q);
    let mut log_term = k as f64 * (-q).ln_1p();
    if log_term > -700.0 {
        let mut term = log_term.exp() * w;
        out[0] += term;
        for i in 0..top {
            term *= (k - i as u32) as f64 / (i + 1) as f64 * odds;
            out[i + 1] += term;
        }
    } else {
        // (1 - q)^k underflows; walk the recurrence in log space
        let log_odds = odds.ln();
        let log_w = w.ln();
        out[0] += (log_term + log_w).exp();
        for i in 0..top {
            log_term += ((k - i as u32) as f64 / (i + 1) as f64).ln() + log_odds;
            out[i + 1] += (log_term + log_w).exp();
        }
    }
}

fn poisson_into(mu: f64, out: &mut [f64]) {
    if mu <= 0.0 {
        out[0] = 1.0;
        return;
    }
    let mut term = (-mu).exp();
    out[0] = term;
    for i in 1..out.len() {
        term *= mu / i as f64;
        out[i] = term;
    }
}

/// Negative binomial with shape `r` and mean `mu`.
fn neg_binomial_into(r: f64, mu: f64, out: &mut [f64]) {
    if mu <= 0.0 {
        out[0] = 1.0;
        return;
    }
    let ratio = mu / (r + mu);
    let mut term = (r * (r / (r + mu)).ln()).exp();
    out[0] = term;
    for i in 1..out.len() {
        term *= (i as f64 - 1.0 + r) / i as f64 * ratio;
        out[i] = term;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::nondimensionalize;

    fn reference_params() -> EpidemicParams {
        EpidemicParams::new(1.5, 0.5, 0.5, 0.6).unwrap()
    }

    #[test]
    fn forward_given_age_examples() {
        let p0 = EpidemicParams::new(1.5, 0.5, 0.5, 0.0).unwrap();
        assert_eq!(forward_pmf_given_age(0, 0.7, 4, &p0), 1.0);
        assert_eq!(forward_pmf_given_age(5, 0.7, 4, &reference_params()), 0.0);
        assert_eq!(forward_pmf_given_age(-1, 0.7, 4, &reference_params()), 0.0);
        let v = forward_pmf_given_age(2, 1.0, 4, &reference_params());
        let q = edge_trace_prob(1.0, &reference_params());
        assert!((v - 6.0 * q * q * (1.0 - q) * (1.0 - q)).abs() < 1e-14);
        assert!((v - 0.22269).abs() < 1e-4);
    }

    #[test]
    fn forward_fixed_normalized_and_degenerate() {
        let pr = reference_params();
        let total: f64 = (0..=4).map(|i| forward_pmf_fixed(i, 4, &pr).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-8);
        let p0 = pr.with_p(0.0).unwrap();
        assert!((forward_pmf_fixed(0, 4, &p0).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(forward_pmf_fixed(2, 4, &p0).unwrap(), 0.0);
        assert!(matches!(forward_pmf_fixed(0, 1, &pr), Err(Error::Subcritical { .. })));
    }

    #[test]
    fn full_given_age_examples() {
        let pr = reference_params();
        let p0 = pr.with_p(0.0).unwrap();
        assert_eq!(full_pmf_given_age(0, 0.4, 5, &p0), 1.0);
        for &a in &[0.05, 0.3, 1.0, 4.0] {
            for k in [2u32, 4, 9] {
                let top = full_pmf_given_age(k as i64 + 1, a, k, &pr);
                let expect = pr.p * infector_alive_prob(a, &pr) * forward_pmf_given_age(k as i64, a, k, &pr);
                assert!((top - expect).abs() < 1e-15);
                let s: f64 = (0..=k as i64 + 1).map(|i| full_pmf_given_age(i, a, k, &pr)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_degree_mixture_is_degenerate() {
        let pr = reference_params();
        let model = DegreeModel::fixed(4).unwrap();
        let pmf = detectee_pmf(&pr, &model, TracingMode::ForwardOnly, Some(6)).unwrap();
        for i in 0..=6 {
            let direct = forward_pmf_fixed(i, 4, &pr).unwrap();
            assert!((pmf.probs[i as usize] - direct).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn thinning_matches_direct_sum() {
        let routes = |route| PmfOptions {
            route,
            quadrature: AgeQuadrature::Adaptive { abs_tol: 1e-12 },
            degree_tail_tol: 1e-15,
        };
        let models = [
            DegreeModel::poisson(4.0).unwrap(),
            DegreeModel::geometric(16.6).unwrap(),
            DegreeModel::neg_binomial(0.16, 4.5).unwrap(),
            DegreeModel::neg_binomial(2.5, 9.0).unwrap(),
        ];
        for model in &models {
            for mode in [TracingMode::ForwardOnly, TracingMode::Full] {
                let pr = nondimensionalize(3.0, model.mean(), 0.72).unwrap();
                let a = detectee_pmf_with(&pr, model, mode, Some(40), &routes(MixtureRoute::Auto)).unwrap();
                let b = detectee_pmf_with(&pr, model, mode, Some(40), &routes(MixtureRoute::DirectSum)).unwrap();
                for (x, y) in a.probs.iter().zip(&b.probs) {
                    assert!((x - y).abs() < 1e-10, "{model} {mode}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn fixed_panels_match_adaptive() {
        let model = DegreeModel::power_law(1.48, 500).unwrap();
        let pr = nondimensionalize(3.0, model.mean(), 0.74).unwrap();
        let a = detectee_pmf_with(&pr, &model, TracingMode::ForwardOnly, Some(30), &PmfOptions::likelihood()).unwrap();
        let b = detectee_pmf(&pr, &model, TracingMode::ForwardOnly, Some(30)).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn p_zero_gives_point_mass() {
        let pr = reference_params().with_p(0.0).unwrap();
        for model in [
            DegreeModel::poisson(4.0).unwrap(),
            DegreeModel::power_law(2.0, 100).unwrap(),
            DegreeModel::RandomMixingLimit,
        ] {
            for mode in [TracingMode::ForwardOnly, TracingMode::Full] {
                let pmf = detectee_pmf(&pr, &model, mode, None).unwrap();
                assert!((pmf.probs[0] - 1.0).abs() < 1e-9);
                assert!(pmf.probs[1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn default_support_reaches_tail_budget() {
        let model = DegreeModel::neg_binomial(0.16, 4.5).unwrap();
        let pr = nondimensionalize(3.0, 4.5, 0.72).unwrap();
        let pmf = detectee_pmf(&pr, &model, TracingMode::Full, None).unwrap();
        assert!(pmf.tail < DEFAULT_TAIL_MASS);
        assert!((pmf.total_mass() - 1.0).abs() < 1e-8);
        assert!(pmf.probs.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn random_mixing_is_large_fixed_degree_limit() {
        // K = N - 1 large with beta scaled so that R0 stays fixed
        let r0 = 2.0;
        let big = 4000u32;
        let fixed = DegreeModel::fixed(big).unwrap();
        let pr_fixed = nondimensionalize(r0, big as f64, 0.7).unwrap();
        let pr_mix = EpidemicParams::new(r0, 0.5, 0.5, 0.7).unwrap();
        let a = detectee_pmf(&pr_fixed, &fixed, TracingMode::ForwardOnly, Some(15)).unwrap();
        let b = detectee_pmf(&pr_mix, &DegreeModel::RandomMixingLimit, TracingMode::ForwardOnly, Some(15)).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 2e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn subcritical_models_rejected() {
        let pr = reference_params();
        assert!(detectee_pmf(&pr, &DegreeModel::fixed(1).unwrap(), TracingMode::Full, None).is_err());
        assert!(detectee_pmf(&pr, &DegreeModel::poisson(0.9).unwrap(), TracingMode::Full, None).is_err());
    }

    #[test]
    fn binomial_helpers_agree() {
        for &(k, q) in &[(10u32, 0.3), (3000, 0.45), (50, 1e-9), (7, 0.999)] {
            let mut out = vec![0.0; 12];
            add_binomial(k, q, 1.0, &mut out);
            for (i, v) in out.iter().enumerate() {
                let d = binomial_pmf(i as u32, k, q);
                assert!((v - d).abs() <= 1e-10 * d + 1e-300, "k={k} q={q} i={i}: {v} vs {d}");
            }
        }
    }
}
