//! Closed-form epidemiological kernels for the SIR process on a rooted tree.
//!
//! Ages are always ages since infection. Every formula here depends on the
//! recovery rates only through their sum `alpha + sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this relative gap between `beta` and `alpha + sigma` the edge tracing
/// probability switches to its analytic limit.
const SINGULAR_REL_GAP: f64 = 1e-8;

/// Rates of the SIR process with contact tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    /// Per-edge infectious-contact rate.
    pub beta: f64,
    /// Unobserved recovery rate.
    pub alpha: f64,
    /// Observed diagnosis rate.
    pub sigma: f64,
    /// Per-edge tracing success probability.
    pub p: f64,
}

impl EpidemicParams {
    /// Validates `beta > 0`, `alpha >= 0`, `sigma >= 0` with `alpha + sigma > 0`,
    /// and `0 <= p <= 1`.
    ///
    /// `sigma = 0` is accepted so that the simulator can run a process without
    /// diagnoses; the estimator formulas only need `alpha + sigma > 0`.
    pub fn new(beta: f64, alpha: f64, sigma: f64, p: f64) -> Result<Self> {
        let finite = [beta, alpha, sigma, p].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("epidemic parameters must be finite".into()));
        }
        if beta <= 0.0 {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if alpha < 0.0 || sigma < 0.0 {
            return Err(Error::Domain(format!(
                "alpha and sigma must be non-negative, got alpha={alpha}, sigma={sigma}"
            )));
        }
        if alpha + sigma <= 0.0 {
            return Err(Error::Domain("alpha + sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(Self {
            beta,
            alpha,
            sigma,
            p,
        })
    }

    /// Total removal rate `alpha + sigma`.
    #[inline]
    pub fn removal_rate(&self) -> f64 {
        self.alpha + self.sigma
    }

    /// Probability that an infected individual is eventually diagnosed.
    #[inline]
    pub fn p_obs(&self) -> f64 {
        self.sigma / (self.alpha + self.sigma)
    }

    /// Same process with all rates multiplied by `c`; the detectee
    /// distribution is invariant under this map.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        Self::new(self.beta * c, self.alpha * c, self.sigma * c, self.p)
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.beta, self.alpha, self.sigma, p)
    }
}

/// Exponential-phase summary of the epidemic on the tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSummary {
    /// Malthusian growth exponent.
    pub lambda: f64,
    /// Basic reproduction number.
    pub r0: f64,
    /// Rate of the exponential index-case age density.
    pub phi_rate: f64,
}

/// Rate at which an infected individual of age `a` produces infectees:
/// `E[K] beta exp(-beta a)`.
pub fn infection_kernel(a: f64, beta: f64, mean_k: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("age must be non-negative, got {a}")));
    }
    if !(beta > 0.0) || !(mean_k > 0.0) {
        return Err(Error::Domain("beta and E[K] must be positive".into()));
    }
    Ok(mean_k * beta * (-beta * a).exp())
}

pub fn growth_summary(params: &EpidemicParams, mean_k: f64) -> Result<GrowthSummary> {
    if !(mean_k > 1.0) {
        return Err(Error::Subcritical { mean_k });
    }
    let beta = params.beta;
    let gamma = params.removal_rate();
    Ok(GrowthSummary {
        lambda: beta * (mean_k - 1.0) - gamma,
        r0: mean_k * beta / (gamma + beta),
        phi_rate: beta * (mean_k - 1.0),
    })
}

/// `int_0^inf theta(a) exp(-(lambda + alpha + sigma) a) da - 1`, in closed form.
///
/// Zero exactly when `lambda` is the growth exponent.
pub fn euler_lotka_residual(params: &EpidemicParams, mean_k: f64, lambda: f64) -> f64 {
    let beta = params.beta;
    mean_k * beta / (lambda + params.removal_rate() + beta) - 1.0
}

/// Asymptotic density of the age at diagnosis of index cases.
pub fn index_age_density(a: f64, phi_rate: f64) -> Result<f64> {
    if !(phi_rate > 0.0) {
        return Err(Error::Domain(format!(
            "age density rate must be positive, got {phi_rate}"
        )));
    }
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("age must be non-negative, got {a}")));
    }
    Ok(phi_rate * (-phi_rate * a).exp())
}

/// Probability that a single downstream node is infected and still infectious
/// when its infector reaches age `a`:
/// `beta / (gamma - beta) * (exp(-beta a) - exp(-gamma a))` with `gamma = alpha + sigma`.
pub fn downstream_infectious_prob(a: f64, beta: f64, gamma: f64) -> f64 {
    let gap = gamma - beta;
    let decay = (-beta * a).exp();
    if gap.abs() < SINGULAR_REL_GAP * gamma {
        return beta * a * decay;
    }
    // exp(-beta a) - exp(-gamma a) = -exp(-beta a) * expm1(-gap a)
    beta * decay * (-(-gap * a).exp_m1()) / gap
}

/// Probability that a downstream node is infected and successfully traced
/// given the index case is diagnosed at age `a`.
pub fn edge_trace_prob(a: f64, params: &EpidemicParams) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let s2 = downstream_infectious_prob(a, params.beta, params.removal_rate());
    (params.p * s2).clamp(0.0, params.p)
}

/// Probability that the infector is still infectious when the index case is
/// diagnosed at age `a` (first order in `p`).
pub fn infector_alive_prob(a: f64, params: &EpidemicParams) -> f64 {
    (-params.removal_rate() * a).exp()
}

/// Parameters with `alpha + sigma = 1` reproducing `r0` for a tree with mean
/// downstream degree `mean_k`.
pub fn nondimensionalize(r0: f64, mean_k: f64, p: f64) -> Result<EpidemicParams> {
    if !(r0 > 0.0) {
        return Err(Error::Domain(format!("R0 must be positive, got {r0}")));
    }
    if !(mean_k > r0) {
        return Err(Error::DegreeBelowR0 { mean_k, r0 });
    }
    EpidemicParams::new(r0 / (mean_k - r0), 0.5, 0.5, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, gamma: f64, p: f64) -> EpidemicParams {
        EpidemicParams::new(beta, gamma / 2.0, gamma / 2.0, p).unwrap()
    }

    #[test]
    fn infection_kernel_values() {
        assert_eq!(infection_kernel(0.0, 1.5, 4.0).unwrap(), 6.0);
        let v = infection_kernel(1.0, 1.5, 4.0).unwrap();
        assert!((v - 6.0 * (-1.5f64).exp()).abs() < 1e-15);
        assert!((v - 1.3388).abs() < 1e-4);
        assert!(infection_kernel(1e3, 1.5, 4.0).unwrap() < 1e-300);
        assert!(infection_kernel(-0.1, 1.5, 4.0).is_err());
    }

    #[test]
    fn growth_summary_reference_point() {
        let g = growth_summary(&EpidemicParams::new(1.5, 0.5, 0.5, 0.6).unwrap(), 4.0).unwrap();
        assert!((g.lambda - 3.5).abs() < 1e-14);
        assert!((g.r0 - 2.4).abs() < 1e-14);
        assert!((g.phi_rate - 4.5).abs() < 1e-14);
    }

    #[test]
    fn growth_threshold_and_boundary() {
        let g = growth_summary(&EpidemicParams::new(1.0, 0.5, 0.5, 0.0).unwrap(), 2.0).unwrap();
        assert_eq!(g.lambda, 0.0);
        let p = EpidemicParams::new(1.5, 0.5, 0.5, 0.0).unwrap();
        let g = growth_summary(&p, 1.0001).unwrap();
        assert!((g.phi_rate - 1.5e-4).abs() < 1e-12);
        assert!(matches!(growth_summary(&p, 1.0), Err(Error::Subcritical { .. })));
    }

    #[test]
    fn euler_lotka_residual_vanishes() {
        for &(beta, a, s, k) in &[(1.5, 0.5, 0.5, 4.0), (0.2, 1.0, 0.1, 30.0), (3.0, 0.0, 2.0, 1.2)] {
            let p = EpidemicParams::new(beta, a, s, 0.3).unwrap();
            let g = growth_summary(&p, k).unwrap();
            assert!(euler_lotka_residual(&p, k, g.lambda).abs() < 1e-10);
        }
    }

    #[test]
    fn age_density() {
        assert_eq!(index_age_density(0.0, 4.5).unwrap(), 4.5);
        assert!(index_age_density(1.0, 0.0).is_err());
        assert!(index_age_density(1.0, -1.0).is_err());
    }

    #[test]
    fn edge_trace_prob_examples() {
        let pr = params(1.5, 1.0, 0.6);
        assert_eq!(edge_trace_prob(0.0, &pr), 0.0);
        let v = edge_trace_prob(1.0, &pr);
        let expected = 0.6 * (1.5 / (1.0 - 1.5)) * ((-1.5f64).exp() - (-1.0f64).exp());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.26055).abs() < 1e-5);
        assert_eq!(edge_trace_prob(2.0, &params(1.5, 1.0, 0.0)), 0.0);
        assert!(edge_trace_prob(500.0, &pr) < 1e-100);
    }

    #[test]
    fn edge_trace_prob_continuous_across_singularity() {
        for &a in &[0.1, 0.7, 1.0, 3.0, 10.0] {
            let at = edge_trace_prob(a, &params(1.0, 1.0, 0.6));
            assert!((at - 0.6 * a * (-a).exp()).abs() < 1e-15);
            for &eps in &[1e-6, -1e-6, 1e-9, -1e-9, 1e-7] {
                let near = edge_trace_prob(a, &params(1.0 + eps, 1.0, 0.6));
                assert!(((near - at) / at).abs() < 1e-5, "a={a} eps={eps}");
            }
        }
    }

    #[test]
    fn infector_alive() {
        let pr = params(2.0, 1.0, 0.5);
        assert_eq!(infector_alive_prob(0.0, &pr), 1.0);
        assert!((infector_alive_prob(2f64.ln(), &pr) - 0.5).abs() < 1e-15);
        assert!(infector_alive_prob(1e4, &pr) < 1e-300);
    }

    #[test]
    fn nondimensionalize_examples() {
        let p = nondimensionalize(3.0, 4.5, 0.5).unwrap();
        assert!((p.beta - 2.0).abs() < 1e-15);
        assert_eq!(p.removal_rate(), 1.0);
        let g = growth_summary(&p, 4.5).unwrap();
        assert!((g.r0 - 3.0).abs() < 1e-14);

        let p = nondimensionalize(3.0, 6.0, 0.5).unwrap();
        assert_eq!(p.beta, 1.0);
        let v = edge_trace_prob(1.0, &p);
        assert!(v.is_finite() && v > 0.0);

        assert!(matches!(
            nondimensionalize(3.0, 3.0, 0.5),
            Err(Error::DegreeBelowR0 { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(EpidemicParams::new(0.0, 0.5, 0.5, 0.5).is_err());
        assert!(EpidemicParams::new(1.0, -0.1, 0.5, 0.5).is_err());
        assert!(EpidemicParams::new(1.0, 0.0, 0.0, 0.5).is_err());
        assert!(EpidemicParams::new(1.0, 0.5, 0.5, 1.1).is_err());
        assert!(EpidemicParams::new(f64::NAN, 0.5, 0.5, 0.1).is_err());
        let p = EpidemicParams::new(1.0, 0.5, 1.5, 0.1).unwrap();
        assert_eq!(p.p_obs(), 0.75);
    }
}
