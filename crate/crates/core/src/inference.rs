//! Likelihood of observed detectee counts and maximum-likelihood fitting.
//!
//! Fits are carried out on an unconstrained parameter vector: `logit p`,
//! `ln(E[K] - R0)` for families parameterised by their mean, `ln r` for the
//! negative binomial shape and `ln(gamma - 1)` for the power-law exponent.
//! Epidemic rates are nondimensionalised so that only `R0` enters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degree::{DegreeFamily, DegreeModel};
use crate::error::{Error, Result};
use crate::kernels::{nondimensionalize, EpidemicParams};
use crate::mixture::{detectee_pmf_with, PmfOptions, TracingMode};
use crate::selection::aic;

/// Power-law truncation used for fitting unless overridden.
pub const FIT_POWER_LAW_KMAX: u32 = 200;

/// Frequencies of detectee counts, sorted by count with duplicates merged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetecteeHistogram {
    entries: Vec<(u32, u64)>,
}

impl DetecteeHistogram {
    /// Canonicalises `(detectees, frequency)` pairs. Zero frequencies are dropped.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u64)>,
    {
        let mut merged: BTreeMap<u32, u64> = BTreeMap::new();
        for (i, n) in pairs {
            let slot = merged.entry(i).or_insert(0);
            *slot = slot
                .checked_add(n)
                .ok_or_else(|| Error::Data(format!("frequency overflow at {i} detectees")))?;
        }
        let entries: Vec<_> = merged.into_iter().filter(|&(_, n)| n > 0).collect();
        if entries.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        Ok(Self { entries })
    }

    pub fn from_observations(obs: &[u32]) -> Result<Self> {
        Self::from_pairs(obs.iter().map(|&i| (i, 1)))
    }

    pub fn entries(&self) -> &[(u32, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, n)| n).sum()
    }

    pub fn max_detectees(&self) -> u32 {
        self.entries.last().map(|&(i, _)| i).unwrap_or(0)
    }

    /// Frequency of `i` detectees.
    pub fn count(&self, i: u32) -> u64 {
        self.entries
            .binary_search_by_key(&i, |&(j, _)| j)
            .map(|idx| self.entries[idx].1)
            .unwrap_or(0)
    }

    /// One observation per index case, in ascending order.
    pub fn expand(&self) -> Vec<u32> {
        self.entries
            .iter()
            .flat_map(|&(i, n)| std::iter::repeat_n(i, n as usize))
            .collect()
    }

    /// Canonical CSV form, header included.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detectees,frequency\n");
        for (i, n) in &self.entries {
            s.push_str(&format!("{i},{n}\n"));
        }
        s
    }

    /// `sha256:<hex>` of the canonical CSV form.
    pub fn digest(&self) -> String {
        content_digest(self.to_csv().as_bytes())
    }
}

/// `sha256:<hex>` of arbitrary bytes.
pub fn content_digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Log-likelihood `sum n_i ln P(i)` with the smooth fixed-panel quadrature.
///
/// Returns negative infinity when an observed count has zero probability.
pub fn log_likelihood(
    params: &EpidemicParams,
    model: &DegreeModel,
    mode: TracingMode,
    data: &DetecteeHistogram,
) -> Result<f64> {
    log_likelihood_with(params, model, mode, data, &PmfOptions::likelihood())
}

pub fn log_likelihood_with(
    params: &EpidemicParams,
    model: &DegreeModel,
    mode: TracingMode,
    data: &DetecteeHistogram,
    options: &PmfOptions,
) -> Result<f64> {
    let pmf = detectee_pmf_with(params, model, mode, Some(data.max_detectees() as usize), options)?;
    let mut ll = 0.0;
    for &(i, n) in data.entries() {
        let p = pmf.prob(i as usize);
        if !(p > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        ll += n as f64 * p.ln();
    }
    Ok(ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// Optimum pressed against the `E[K] = R0` boundary.
    BoundaryMaximum,
    /// `E[K]` kept increasing up to the cap; estimates are reported at the cap.
    NotConverged,
}

impl FitStatus {
    pub fn name(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::BoundaryMaximum => "boundary-maximum",
            FitStatus::NotConverged => "not-converged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub p: f64,
    /// Absent for the random-mixing limit.
    pub mean_k: Option<f64>,
    /// Negative binomial `r` or power-law `gamma`.
    pub shape: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldIntervals {
    pub p: Interval,
    pub mean_k: Option<Interval>,
    pub shape: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileInterval {
    pub lower: f64,
    pub upper: f64,
    /// The profile stays above the threshold down to `E[K] = R0`.
    pub lower_at_boundary: bool,
    /// No crossing was found below the search cap; `upper` is infinite.
    pub upper_unbounded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub power_law_k_max: u32,
    /// Largest degree tried for the fixed-degree family.
    pub fixed_k_max: u32,
    pub restarts: usize,
    pub max_iter: usize,
    /// Simplex convergence: spread of log-likelihood values.
    pub spread_tol: f64,
    pub mean_k_cap: f64,
    /// `E[K] - R0` below this counts as a boundary maximum.
    pub boundary_tol: f64,
    pub fd_step: f64,
    pub hessian_step: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            power_law_k_max: FIT_POWER_LAW_KMAX,
            fixed_k_max: 12,
            restarts: 3,
            max_iter: 4000,
            spread_tol: 1e-8,
            mean_k_cap: 200.0,
            boundary_tol: 1e-2,
            fd_step: 1e-4,
            hessian_step: 1e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: DegreeFamily,
    pub r0: f64,
    pub mode: TracingMode,
    pub estimates: Estimates,
    pub ll_max: f64,
    pub aic: f64,
    pub n_params: usize,
    pub status: FitStatus,
    pub gradient_norm: f64,
    /// Optimum in transformed coordinates.
    pub theta: Vec<f64>,
    /// Hessian of the log-likelihood in transformed coordinates.
    pub hessian: Vec<Vec<f64>>,
    pub wald_ci: Option<WaldIntervals>,
    /// Why the Wald intervals are missing, if they are.
    pub wald_note: Option<String>,
    pub profile_ci_mean_k: Option<ProfileInterval>,
    pub power_law_k_max: Option<u32>,
    pub evaluations: usize,
    pub data_digest: String,
}

impl FitResult {
    /// The fitted parameters and degree model.
    pub fn model(&self) -> Result<(EpidemicParams, DegreeModel)> {
        let e = &self.estimates;
        match self.family {
            DegreeFamily::RandomMixing => Ok((
                random_mixing_params(self.r0, e.p)?,
                DegreeModel::RandomMixingLimit,
            )),
            DegreeFamily::PowerLaw => {
                let gamma = e.shape.ok_or_else(|| Error::Parse("power-law fit without gamma".into()))?;
                let model = DegreeModel::power_law(gamma, self.power_law_k_max.unwrap_or(FIT_POWER_LAW_KMAX))?;
                Ok((nondimensionalize(self.r0, model.mean(), e.p)?, model))
            }
            family => {
                let mean = e.mean_k.ok_or_else(|| Error::Parse("fit without mean_k".into()))?;
                let model = match family {
                    DegreeFamily::Fixed => DegreeModel::fixed(mean.round() as u32)?,
                    DegreeFamily::Poisson => DegreeModel::poisson(mean)?,
                    DegreeFamily::Geometric => DegreeModel::geometric(mean)?,
                    _ => DegreeModel::neg_binomial(
                        e.shape.ok_or_else(|| Error::Parse("negative binomial fit without r".into()))?,
                        mean,
                    )?,
                };
                Ok((nondimensionalize(self.r0, mean, e.p)?, model))
            }
        }
    }

    /// Key-value text form (TOML).
    pub fn to_report(&self) -> String {
        toml::to_string(self).expect("fit results always serialise")
    }

    pub fn from_report(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("fit report: {e}")))
    }
}

fn random_mixing_params(r0: f64, p: f64) -> Result<EpidemicParams> {
    // aggregate contact rate with alpha + sigma = 1
    EpidemicParams::new(r0, 0.5, 0.5, p)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Map between transformed coordinates and a model for one family.
#[derive(Debug, Clone, Copy)]
struct Parameterisation {
    family: DegreeFamily,
    r0: f64,
    k_max: u32,
    /// Fixed-degree `k`, held constant during the inner fit.
    fixed_k: Option<u32>,
    /// Value of coordinate 1 held fixed (profiles and capped fits).
    pinned_mean: Option<f64>,
    /// Value of coordinate 2 held fixed (profiles).
    pinned_shape: Option<f64>,
}

impl Parameterisation {
    fn new(family: DegreeFamily, r0: f64, options: &FitOptions) -> Self {
        Self {
            family,
            r0,
            k_max: options.power_law_k_max,
            fixed_k: None,
            pinned_mean: None,
            pinned_shape: None,
        }
    }

    fn has_mean(&self) -> bool {
        matches!(
            self.family,
            DegreeFamily::Poisson | DegreeFamily::Geometric | DegreeFamily::NegBinomial
        )
    }

    /// Full coordinate vector from the free coordinates.
    fn full(&self, free: &[f64]) -> Vec<f64> {
        let mut it = free.iter().copied();
        let mut out = vec![it.next().unwrap()];
        match self.family {
            DegreeFamily::RandomMixing | DegreeFamily::Fixed => {}
            DegreeFamily::PowerLaw => out.push(self.pinned_shape.unwrap_or_else(|| it.next().unwrap())),
            DegreeFamily::Poisson | DegreeFamily::Geometric => {
                out.push(self.pinned_mean.unwrap_or_else(|| it.next().unwrap()))
            }
            DegreeFamily::NegBinomial => {
                out.push(self.pinned_mean.unwrap_or_else(|| it.next().unwrap()));
                out.push(self.pinned_shape.unwrap_or_else(|| it.next().unwrap()));
            }
        }
        out
    }

    fn start(&self) -> Vec<f64> {
        let mut full = vec![0.0];
        match self.family {
            DegreeFamily::RandomMixing | DegreeFamily::Fixed => {}
            DegreeFamily::PowerLaw => full.push((0.5f64).ln()),
            DegreeFamily::Poisson | DegreeFamily::Geometric => full.push(2.0f64.ln()),
            DegreeFamily::NegBinomial => {
                full.push(2.0f64.ln());
                full.push(0.0);
            }
        }
        self.free_of(&full)
    }

    fn free_of(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![full[0]];
        match self.family {
            DegreeFamily::RandomMixing | DegreeFamily::Fixed => {}
            DegreeFamily::PowerLaw => {
                if self.pinned_shape.is_none() {
                    out.push(full[1]);
                }
            }
            DegreeFamily::Poisson | DegreeFamily::Geometric => {
                if self.pinned_mean.is_none() {
                    out.push(full[1]);
                }
            }
            DegreeFamily::NegBinomial => {
                if self.pinned_mean.is_none() {
                    out.push(full[1]);
                }
                if self.pinned_shape.is_none() {
                    out.push(full[2]);
                }
            }
        }
        out
    }

    fn mean_of(&self, theta: &[f64]) -> f64 {
        self.r0 + theta[1].exp()
    }

    fn model(&self, theta: &[f64]) -> Result<(EpidemicParams, DegreeModel)> {
        let p = logistic(theta[0]);
        match self.family {
            DegreeFamily::RandomMixing => Ok((random_mixing_params(self.r0, p)?, DegreeModel::RandomMixingLimit)),
            DegreeFamily::Fixed => {
                let k = self.fixed_k.expect("fixed degree set before fitting");
                Ok((nondimensionalize(self.r0, k as f64, p)?, DegreeModel::fixed(k)?))
            }
            DegreeFamily::PowerLaw => {
                let model = DegreeModel::power_law(1.0 + theta[1].exp(), self.k_max)?;
                Ok((nondimensionalize(self.r0, model.mean(), p)?, model))
            }
            DegreeFamily::Poisson => {
                let m = self.mean_of(theta);
                Ok((nondimensionalize(self.r0, m, p)?, DegreeModel::poisson(m)?))
            }
            DegreeFamily::Geometric => {
                let m = self.mean_of(theta);
                Ok((nondimensionalize(self.r0, m, p)?, DegreeModel::geometric(m)?))
            }
            DegreeFamily::NegBinomial => {
                let m = self.mean_of(theta);
                Ok((
                    nondimensionalize(self.r0, m, p)?,
                    DegreeModel::neg_binomial(theta[2].exp(), m)?,
                ))
            }
        }
    }

    /// Natural-scale `(p, mean_k, shape)` at `theta`.
    fn natural(&self, theta: &[f64]) -> Estimates {
        let p = logistic(theta[0]);
        match self.family {
            DegreeFamily::RandomMixing => Estimates { p, mean_k: None, shape: None },
            DegreeFamily::Fixed => Estimates {
                p,
                mean_k: self.fixed_k.map(|k| k as f64),
                shape: None,
            },
            DegreeFamily::PowerLaw => {
                let gamma = 1.0 + theta[1].exp();
                let mean = DegreeModel::power_law(gamma, self.k_max).map(|m| m.mean()).ok();
                Estimates { p, mean_k: mean, shape: Some(gamma) }
            }
            DegreeFamily::Poisson | DegreeFamily::Geometric => Estimates {
                p,
                mean_k: Some(self.mean_of(theta)),
                shape: None,
            },
            DegreeFamily::NegBinomial => Estimates {
                p,
                mean_k: Some(self.mean_of(theta)),
                shape: Some(theta[2].exp()),
            },
        }
    }
}

struct Objective<'a> {
    param: Parameterisation,
    mode: TracingMode,
    data: &'a DetecteeHistogram,
    evaluations: usize,
}

impl Objective<'_> {
    /// Log-likelihood at full coordinates; `-inf` outside the feasible region.
    fn ll_full(&mut self, theta: &[f64]) -> f64 {
        self.evaluations += 1;
        // keep the transformed coordinates in a range where the model is representable
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 30.0) {
            return f64::NEG_INFINITY;
        }
        match self.param.model(theta) {
            Ok((params, model)) => log_likelihood(&params, &model, self.mode, self.data)
                .unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn ll_free(&mut self, free: &[f64]) -> f64 {
        let full = self.param.full(free);
        self.ll_full(&full)
    }
}

/// Outcome of a simplex search (maximisation).
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead maximisation of `f` from `x0` with initial edge length `scale`.
///
/// Stops when the spread of values across the simplex drops below
/// `spread_tol` or after `max_iter` iterations. Non-finite values are treated
/// as worse than any finite value.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], scale: f64, spread_tol: f64, max_iter: usize) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    // minimise the negation; NaN and -inf map to +inf
    let mut g = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for j in 0..n {
        let mut x = x0.to_vec();
        x[j] += scale;
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| g(x)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        if vals[0].is_finite() && spread.is_finite() && spread < spread_tol {
            let size = pts[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if size < 1e-3 {
                converged = true;
                break;
            }
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = g(&xr);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = g(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(0.5);
                let fc = g(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = g(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let x: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    vals[i] = g(&x);
                    pts[i] = x;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    SimplexResult {
        x: pts[best].clone(),
        value: -vals[best],
        iterations,
        converged,
    }
}

/// Central finite-difference gradient and symmetrised Hessian of `f` at `x`
/// with steps `h_j = step (1 + |x_j|)`.
pub fn gradient_and_hessian<F>(mut f: F, x: &[f64], step: f64) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|xi| step * (1.0 + xi.abs())).collect();
    let mut eval = |dx: &[(usize, f64)]| -> Result<f64> {
        let mut y = x.to_vec();
        for &(j, d) in dx {
            y[j] += d;
        }
        let v = f(&y);
        if !v.is_finite() {
            return Err(Error::DegeneratePoint(format!(
                "objective is {v} at finite-difference probe {y:?}"
            )));
        }
        Ok(v)
    };
    let f0 = eval(&[])?;
    let mut grad = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(&[(i, h[i])])?;
        let fm = eval(&[(i, -h[i])])?;
        grad[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..n {
            if j == i {
                continue;
            }
            let fpp = eval(&[(i, h[i]), (j, h[j])])?;
            let fpm = eval(&[(i, h[i]), (j, -h[j])])?;
            let fmp = eval(&[(i, -h[i]), (j, h[j])])?;
            let fmm = eval(&[(i, -h[i]), (j, -h[j])])?;
            hess[(i, j)] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok((grad, sym))
}

/// Newton refinement of a simplex optimum using finite differences.
fn newton_polish<F>(mut f: F, x0: &[f64], step: f64, iters: usize) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    for _ in 0..iters {
        let Ok((g, h)) = gradient_and_hessian(&mut f, &x, step) else {
            break;
        };
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-7 {
            break;
        }
        let neg = -h;
        let Some(chol) = neg.cholesky() else {
            break;
        };
        let dir = chol.solve(&nalgebra::DVector::from_vec(g));
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let y: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let fy = f(&y);
            if fy.is_finite() && fy >= fx {
                x = y;
                fx = fy;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Maximises the likelihood of `data` over one degree family with `R0` fixed.
pub fn fit_mle(
    data: &DetecteeHistogram,
    family: DegreeFamily,
    r0: f64,
    mode: TracingMode,
    options: &FitOptions,
) -> Result<FitResult> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::Config(format!("R0 must be positive, got {r0}")));
    }
    let base = Parameterisation::new(family, r0, options);
    if family == DegreeFamily::Fixed {
        return fit_fixed(data, base, mode, options);
    }

    let mut obj = Objective { param: base, mode, data, evaluations: 0 };
    let (best, _) = multistart(&mut obj, options);
    let mut theta = base.full(&best);
    let mut status = FitStatus::Converged;

    if base.has_mean() && base.mean_of(&theta) > options.mean_k_cap {
        // the likelihood keeps rising with E[K]: report at the cap
        status = FitStatus::NotConverged;
        let pinned = Parameterisation {
            pinned_mean: Some((options.mean_k_cap - r0).ln()),
            ..base
        };
        obj.param = pinned;
        let (free, _) = multistart(&mut obj, options);
        theta = pinned.full(&free);
        obj.param = base;
    } else {
        let polished = newton_polish(|x| obj.ll_free(x), &best, options.fd_step, 20);
        theta = base.full(&polished);
        if base.has_mean() && base.mean_of(&theta) - r0 < options.boundary_tol {
            status = FitStatus::BoundaryMaximum;
        }
    }
    finish(data, base, theta, status, obj.evaluations, mode, options)
}

/// Runs the simplex from the default start and from `options.restarts`
/// random starts, then once more from the best point found.
fn multistart(obj: &mut Objective<'_>, options: &FitOptions) -> (Vec<f64>, f64) {
    let start = obj.param.start();
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut starts = vec![start.clone()];
    for _ in 0..options.restarts {
        starts.push(start.iter().map(|s| s + rng.random_range(-1.5..1.5)).collect());
    }
    let mut best: Option<SimplexResult> = None;
    for s in &starts {
        let r = nelder_mead(|x| obj.ll_free(x), s, 0.5, options.spread_tol, options.max_iter);
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    let b = best.unwrap();
    let r = nelder_mead(|x| obj.ll_free(x), &b.x, 0.1, options.spread_tol, options.max_iter);
    if r.value >= b.value {
        (r.x, r.value)
    } else {
        (b.x, b.value)
    }
}

fn fit_fixed(
    data: &DetecteeHistogram,
    base: Parameterisation,
    mode: TracingMode,
    options: &FitOptions,
) -> Result<FitResult> {
    let needed = match mode {
        TracingMode::ForwardOnly => data.max_detectees(),
        TracingMode::Full => data.max_detectees().saturating_sub(1),
    };
    let lowest = needed.max(base.r0.floor() as u32 + 1).max(2);
    if lowest > options.fixed_k_max {
        return Err(Error::Config(format!(
            "fixed degree needs k >= {lowest} to explain the data, above the scan limit {}",
            options.fixed_k_max
        )));
    }
    let mut best: Option<(u32, Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    for k in lowest..=options.fixed_k_max {
        let param = Parameterisation { fixed_k: Some(k), ..base };
        let mut obj = Objective { param, mode, data, evaluations: 0 };
        let (x, v) = multistart(&mut obj, options);
        evaluations += obj.evaluations;
        if best.as_ref().is_none_or(|b| v > b.2) {
            best = Some((k, x, v));
        }
    }
    let (k, x, _) = best.unwrap();
    let param = Parameterisation { fixed_k: Some(k), ..base };
    let mut obj = Objective { param, mode, data, evaluations: 0 };
    let polished = newton_polish(|y| obj.ll_free(y), &x, options.fd_step, 20);
    evaluations += obj.evaluations;
    finish(data, param, param.full(&polished), FitStatus::Converged, evaluations, mode, options)
}

fn finish(
    data: &DetecteeHistogram,
    param: Parameterisation,
    theta: Vec<f64>,
    mut status: FitStatus,
    mut evaluations: usize,
    mode: TracingMode,
    options: &FitOptions,
) -> Result<FitResult> {
    let mut obj = Objective { param, mode, data, evaluations: 0 };
    let ll_max = obj.ll_full(&theta);
    if !ll_max.is_finite() {
        return Err(Error::DegeneratePoint(format!(
            "log-likelihood is {ll_max} at the optimum"
        )));
    }
    let free = param.free_of(&theta);
    let grad = gradient_and_hessian(|x| obj.ll_free(x), &free, options.fd_step)?.0;
    let gradient_norm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // curvature over all coordinates, including any pinned at a cap
    let (_, hess) = gradient_and_hessian(|x| obj.ll_full(x), &theta, options.hessian_step)?;
    let hessian: Vec<Vec<f64>> = (0..hess.nrows())
        .map(|i| (0..hess.ncols()).map(|j| hess[(i, j)]).collect())
        .collect();
    let negative_definite = SymmetricEigen::new(hess.clone()).eigenvalues.iter().all(|&e| e < 0.0);
    evaluations += obj.evaluations;

    if status == FitStatus::Converged && !(gradient_norm < 1e-4 && negative_definite) {
        status = FitStatus::NotConverged;
    }

    let family = param.family;
    let n_params = family.n_params();
    let mut result = FitResult {
        family,
        r0: param.r0,
        mode,
        estimates: param.natural(&theta),
        ll_max,
        aic: aic(ll_max, n_params),
        n_params,
        status,
        gradient_norm,
        theta: theta.clone(),
        hessian,
        wald_ci: None,
        wald_note: None,
        profile_ci_mean_k: None,
        power_law_k_max: (family == DegreeFamily::PowerLaw).then_some(param.k_max),
        evaluations,
        data_digest: data.digest(),
    };
    if family == DegreeFamily::Fixed {
        // k is discrete: curvature is only meaningful for p
        let h = result.hessian[0][0];
        let p_int = wald_from_hessian(&DMatrix::from_element(1, 1, h), &theta[..1], |t| {
            Estimates { p: logistic(t[0]), mean_k: None, shape: None }
        });
        match p_int {
            Ok(w) => result.wald_ci = Some(WaldIntervals { p: w.p, mean_k: None, shape: None }),
            Err(e) => result.wald_note = Some(e.to_string()),
        }
        return Ok(result);
    }
    if status == FitStatus::NotConverged {
        result.wald_note = Some("no interior maximum; estimates are held at the search cap".into());
        return Ok(result);
    }
    match wald_ci(&result) {
        Ok(w) => result.wald_ci = Some(w),
        Err(e) => result.wald_note = Some(e.to_string()),
    }
    if result.wald_ci.is_none() && param.has_mean() {
        result.profile_ci_mean_k = Some(profile_ci_mean_k(data, &result, options)?);
    }
    Ok(result)
}

const Z_95: f64 = 1.959963984540054;

/// 95% Wald intervals from the Hessian in transformed coordinates, mapped to
/// the natural scale with the delta method.
pub fn wald_ci(fit: &FitResult) -> Result<WaldIntervals> {
    let n = fit.theta.len();
    let hess = DMatrix::from_fn(n, n, |i, j| fit.hessian[i][j]);
    let param = Parameterisation {
        family: fit.family,
        r0: fit.r0,
        k_max: fit.power_law_k_max.unwrap_or(FIT_POWER_LAW_KMAX),
        fixed_k: fit.estimates.mean_k.map(|m| m.round() as u32),
        pinned_mean: None,
        pinned_shape: None,
    };
    wald_from_hessian(&hess, &fit.theta, |t| param.natural(t))
}

fn wald_from_hessian<M>(hess: &DMatrix<f64>, theta: &[f64], natural: M) -> Result<WaldIntervals>
where
    M: Fn(&[f64]) -> Estimates,
{
    let neg = -hess;
    let max_eig = SymmetricEigen::new(hess.clone())
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    if !(max_eig < 0.0) {
        return Err(Error::NotNegativeDefinite { max_eigenvalue: max_eig });
    }
    let cov = neg
        .try_inverse()
        .ok_or(Error::NotNegativeDefinite { max_eigenvalue: max_eig })?;
    let n = theta.len();
    let at = natural(theta);
    // Jacobian of (p, mean_k, shape) with respect to theta by central differences
    let project = |e: &Estimates| [Some(e.p), e.mean_k, e.shape];
    let centre = project(&at);
    let mut jac = vec![[0.0f64; 3]; n];
    for j in 0..n {
        let h = 1e-6 * (1.0 + theta[j].abs());
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (pu, pd) = (project(&natural(&up)), project(&natural(&dn)));
        for q in 0..3 {
            if let (Some(a), Some(b)) = (pu[q], pd[q]) {
                jac[j][q] = (a - b) / (2.0 * h);
            }
        }
    }
    let interval = |q: usize| -> Option<Interval> {
        let est = centre[q]?;
        let mut var = 0.0;
        for a in 0..n {
            for b in 0..n {
                var += jac[a][q] * cov[(a, b)] * jac[b][q];
            }
        }
        let half = Z_95 * var.max(0.0).sqrt();
        Some(Interval { lower: est - half, upper: est + half })
    };
    // a probability interval never leaves [0, 1]
    let p = interval(0).map(|i| Interval { lower: i.lower.max(0.0), upper: i.upper.min(1.0) });
    Ok(WaldIntervals {
        p: p.unwrap(),
        mean_k: interval(1),
        shape: interval(2),
    })
}

/// Profile interval for `E[K]` with the shape held at its estimate and `p`
/// re-maximised: all `E[K]` whose profile log-likelihood exceeds `ll_max - 2`.
pub fn profile_ci_mean_k(
    data: &DetecteeHistogram,
    fit: &FitResult,
    options: &FitOptions,
) -> Result<ProfileInterval> {
    let mean_hat = fit
        .estimates
        .mean_k
        .ok_or_else(|| Error::Config(format!("{} has no mean parameter to profile", fit.family)))?;
    if !matches!(
        fit.family,
        DegreeFamily::Poisson | DegreeFamily::Geometric | DegreeFamily::NegBinomial
    ) {
        return Err(Error::Config(format!("{} has no mean parameter to profile", fit.family)));
    }
    let r0 = fit.r0;
    let base = Parameterisation {
        pinned_shape: (fit.family == DegreeFamily::NegBinomial).then(|| fit.theta[2]),
        ..Parameterisation::new(fit.family, r0, options)
    };
    let threshold = fit.ll_max - 2.0;
    let mut p_start = fit.theta[0];
    let mut profile = |mean: f64| -> f64 {
        let param = Parameterisation {
            pinned_mean: Some((mean - r0).ln()),
            ..base
        };
        let mut obj = Objective { param, mode: fit.mode, data, evaluations: 0 };
        let r = nelder_mead(|x| obj.ll_free(x), &[p_start], 0.3, 1e-10, 500);
        if r.value.is_finite() {
            p_start = r.x[0];
        }
        r.value
    };
    profile_interval(&mut profile, r0, mean_hat, threshold, options.mean_k_cap * 50.0)
}

/// Interval of `x > lower_bound` around `x_hat` where `f(x) > threshold`,
/// located by bisection to `1e-3`.
pub fn profile_interval<F>(f: &mut F, lower_bound: f64, x_hat: f64, threshold: f64, search_cap: f64) -> Result<ProfileInterval>
where
    F: FnMut(f64) -> f64,
{
    const TOL: f64 = 1e-3;
    let bisect = |f: &mut F, mut inside: f64, mut outside: f64| -> f64 {
        while (outside - inside).abs() > TOL {
            let mid = 0.5 * (inside + outside);
            if f(mid) > threshold {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };

    // upper side: expand geometrically in the distance from the boundary
    let mut inside = x_hat;
    let mut gap = (x_hat - lower_bound).max(TOL);
    let mut upper = None;
    while lower_bound + gap * 2.0 <= search_cap {
        gap *= 2.0;
        let x = lower_bound + gap;
        if f(x) <= threshold {
            upper = Some(bisect(f, inside, x));
            break;
        }
        inside = x;
    }
    let (upper, upper_unbounded) = match upper {
        Some(u) => (u, false),
        None => (f64::INFINITY, true),
    };

    let near = lower_bound + TOL * 1e-3;
    let (lower, lower_at_boundary) = if f(near) > threshold {
        (lower_bound, true)
    } else {
        (bisect(f, x_hat, near), false)
    };
    Ok(ProfileInterval {
        lower,
        upper,
        lower_at_boundary,
        upper_unbounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn karnataka() -> DetecteeHistogram {
        DetecteeHistogram::from_pairs([
            (0, 766),
            (1, 87),
            (2, 34),
            (3, 19),
            (4, 16),
            (5, 12),
            (6, 3),
            (7, 4),
            (8, 3),
            (10, 2),
            (11, 1),
            (12, 1),
            (13, 1),
            (15, 1),
            (16, 1),
            (19, 2),
            (22, 1),
            (28, 1),
            (29, 1),
        ])
        .unwrap()
    }

    #[test]
    fn histogram_canonical_form() {
        let h = DetecteeHistogram::from_pairs([(2, 10), (0, 3), (2, 24), (5, 0)]).unwrap();
        assert_eq!(h.entries(), &[(0, 3), (2, 34)]);
        assert_eq!(h.total(), 37);
        assert_eq!(h.max_detectees(), 2);
        assert_eq!(h.count(2), 34);
        assert_eq!(h.count(1), 0);
        let again = DetecteeHistogram::from_observations(&h.expand()).unwrap();
        assert_eq!(again, h);
        assert_eq!(again.digest(), h.digest());
        assert!(matches!(DetecteeHistogram::from_pairs([(1, 0)]), Err(Error::EmptyHistogram)));
        assert_eq!(karnataka().total(), 956);
    }

    #[test]
    fn likelihood_of_point_mass() {
        let params = nondimensionalize(3.0, 4.5, 0.72).unwrap();
        let model = DegreeModel::neg_binomial(0.16, 4.5).unwrap();
        let data = DetecteeHistogram::from_pairs([(0, 2)]).unwrap();
        let ll = log_likelihood(&params, &model, TracingMode::ForwardOnly, &data).unwrap();
        let pmf = detectee_pmf_with(&params, &model, TracingMode::ForwardOnly, Some(0), &PmfOptions::likelihood())
            .unwrap();
        assert!((ll - 2.0 * pmf.probs[0].ln()).abs() < 1e-12);
    }

    #[test]
    fn impossible_count_gives_negative_infinity() {
        let params = nondimensionalize(3.0, 4.0, 0.6).unwrap();
        let ll = log_likelihood(&params, &DegreeModel::fixed(4).unwrap(), TracingMode::ForwardOnly, &karnataka())
            .unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn weighting_identity() {
        let data = DetecteeHistogram::from_pairs([(0, 7), (1, 3), (4, 1)]).unwrap();
        let params = nondimensionalize(2.0, 6.0, 0.5).unwrap();
        let model = DegreeModel::geometric(6.0).unwrap();
        let ll = log_likelihood(&params, &model, TracingMode::ForwardOnly, &data).unwrap();
        let pmf = detectee_pmf_with(&params, &model, TracingMode::ForwardOnly, Some(4), &PmfOptions::likelihood())
            .unwrap();
        let expanded: f64 = data.expand().iter().map(|&i| pmf.probs[i as usize].ln()).sum();
        assert!((ll - expanded).abs() < 1e-10);
    }

    #[test]
    fn finite_differences_on_quadratics() {
        let (g, h) = gradient_and_hessian(|x| x[0] * x[0] + 3.0 * x[1] * x[1], &[1.0, 1.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 6.0).abs() < 1e-6);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-6 && (h[(1, 1)] - 6.0).abs() < 1e-6);
        assert!(h[(0, 1)].abs() < 1e-6 && h[(1, 0)].abs() < 1e-6);
        let (_, h) = gradient_and_hessian(|x| 2.0 * x[0] - 5.0 * x[1] + 0.5 * x[2], &[0.3, -2.0, 7.0], 1e-4).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-6));
        let err = gradient_and_hessian(|x| if x[0] > 1.0 { f64::NEG_INFINITY } else { 0.0 }, &[1.0], 1e-4);
        assert!(matches!(err, Err(Error::DegeneratePoint(_))));
    }

    #[test]
    fn simplex_finds_quadratic_maximum() {
        let r = nelder_mead(|x| -(x[0] - 1.0).powi(2) - 4.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 1e-14, 5000);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn wald_on_known_curvature() {
        // ll = -(theta_p^2)/(2 s^2) on logit scale: se(theta) = s
        let s = 0.4;
        let hess = DMatrix::from_element(1, 1, -1.0 / (s * s));
        let theta = [0.3];
        let w = wald_from_hessian(&hess, &theta, |t| Estimates { p: logistic(t[0]), mean_k: None, shape: None })
            .unwrap();
        let p = logistic(0.3);
        let half = Z_95 * s * p * (1.0 - p);
        assert!((w.p.lower - (p - half)).abs() < 1e-6);
        assert!((w.p.upper - (p + half)).abs() < 1e-6);
        let flat = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(
            wald_from_hessian(&flat, &theta, |t| Estimates { p: logistic(t[0]), mean_k: None, shape: None }),
            Err(Error::NotNegativeDefinite { .. })
        ));
    }

    #[test]
    fn profile_of_quadratic_matches_wald() {
        // ll(x) = -(x - 5)^2 / (2 * 0.8^2), ll_max = 0
        let sd = 0.8;
        let mut f = |x: f64| -(x - 5.0).powi(2) / (2.0 * sd * sd);
        let iv = profile_interval(&mut f, 1.0, 5.0, -2.0, 1e4).unwrap();
        let half = 2.0 * sd; // ll drops by 2 at two standard deviations
        assert!(((iv.upper - 5.0) - half).abs() < 2e-3);
        assert!(((5.0 - iv.lower) - half).abs() < 2e-3);
        let wald_half = Z_95 * sd;
        assert!(((iv.upper - iv.lower) / (2.0 * wald_half) - 1.0).abs() < 0.05);
        assert!(!iv.lower_at_boundary && !iv.upper_unbounded);
    }

    #[test]
    fn profile_detects_flat_tail() {
        let mut f = |x: f64| if x < 4.0 { -(x - 4.0).powi(2) } else { 0.0 };
        let iv = profile_interval(&mut f, 3.0, 4.0, -2.0, 1e4).unwrap();
        assert!(iv.upper_unbounded && iv.upper.is_infinite());
        assert!(iv.lower_at_boundary && iv.lower == 3.0);
    }

    #[test]
    fn report_round_trip() {
        let data = DetecteeHistogram::from_pairs([(0, 50), (1, 10), (2, 4), (3, 1)]).unwrap();
        let fit = fit_mle(&data, DegreeFamily::RandomMixing, 2.0, TracingMode::ForwardOnly, &FitOptions::default()).unwrap();
        let text = fit.to_report();
        assert!(text.contains("family = \"RandomMixing\"") || text.contains("family"));
        let back = FitResult::from_report(&text).unwrap();
        assert_eq!(back.estimates.p, fit.estimates.p);
        assert_eq!(back.data_digest, data.digest());
        assert_eq!(fit.aic, 2.0 * 1.0 - 2.0 * fit.ll_max);
    }
}
