//! Integration over `[0, inf)` of exponentially decaying integrands, and
//! truncated summation of series with geometrically decaying terms.
//!
//! The half line is mapped onto `[0, 1)` by `u = 1 - exp(-r a)` where `r` is
//! the dominant decay rate of the integrand, then integrated with globally
//! adaptive 7/15-point Gauss-Kronrod rules. The interval with the largest
//! error estimate is always bisected next, with ties broken by position, so
//! results are bit-for-bit reproducible.

use crate::error::{Error, Result};

/// Absolute tolerance used when evaluating detectee distributions.
pub const PMF_ABS_TOL: f64 = 1e-10;
/// Absolute tolerance used inside optimisation loops.
pub const OPTIM_ABS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSpec {
    /// Dominant exponential decay rate of the integrand.
    pub decay_rate_hint: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl IntegrationSpec {
    pub fn new(decay_rate_hint: f64, abs_tol: f64) -> Result<Self> {
        if !(decay_rate_hint > 0.0) || !decay_rate_hint.is_finite() {
            return Err(Error::Domain(format!(
                "decay rate hint must be positive, got {decay_rate_hint}"
            )));
        }
        if !(abs_tol > 0.0) {
            return Err(Error::Domain(format!("abs_tol must be positive, got {abs_tol}")));
        }
        Ok(Self {
            decay_rate_hint,
            abs_tol,
            max_subdivisions: 500,
        })
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }
}

// Kronrod abscissae on [-1, 1] (non-negative half) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Segment {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: f64,
}

/// Integrates `f` over `[0, inf)`.
pub fn integrate_semi_infinite<F>(mut f: F, spec: &IntegrationSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let v = integrate_semi_infinite_vec(|a, out| out[0] = f(a), 1, spec)?;
    Ok(v[0])
}

/// Integrates a vector-valued `f` over `[0, inf)`.
///
/// `f(a, out)` must write the integrand at `a` into `out` (length `dim`,
/// zeroed before each call). The error criterion is the sum over segments of
/// the largest per-component error.
pub fn integrate_semi_infinite_vec<F>(mut f: F, dim: usize, spec: &IntegrationSpec) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let rate = spec.decay_rate_hint;
    let mut scratch = vec![0.0; 15 * dim];
    let mut g = |u: f64, out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        if u >= 1.0 {
            return;
        }
        let a = -(-u).ln_1p() / rate;
        f(a, out);
        let jac = 1.0 / (rate * (1.0 - u));
        out.iter_mut().for_each(|x| *x *= jac);
    };

    let mut segments = vec![kronrod_segment(&mut g, 0.0, 1.0, dim, &mut scratch)];
    loop {
        let total_err: f64 = segments.iter().map(|s| s.error).sum();
        if total_err <= spec.abs_tol {
            break;
        }
        if segments.len() >= spec.max_subdivisions {
            let estimate = sum_segments(&segments, dim);
            return Err(Error::Numerical {
                context: "semi-infinite quadrature".into(),
                estimate: estimate.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                error_bound: total_err,
            });
        }
        // worst segment, earliest on ties
        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, s)| {
                if s.error > be {
                    (i, s.error)
                } else {
                    (bi, be)
                }
            });
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        if !(mid > seg.lo && mid < seg.hi) {
            let estimate = sum_segments(&segments, dim);
            return Err(Error::Numerical {
                context: "semi-infinite quadrature (segment cannot be split)".into(),
                estimate: estimate.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                error_bound: total_err,
            });
        }
        segments.push(kronrod_segment(&mut g, seg.lo, mid, dim, &mut scratch));
        segments.push(kronrod_segment(&mut g, mid, seg.hi, dim, &mut scratch));
        // restore a canonical order so the summation order is input-independent
        segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    }
    Ok(sum_segments(&segments, dim))
}

fn sum_segments(segments: &[Segment], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for s in segments {
        for (o, v) in out.iter_mut().zip(&s.value) {
            *o += v;
        }
    }
    out
}

fn kronrod_segment<G>(g: &mut G, lo: f64, hi: f64, dim: usize, scratch: &mut [f64]) -> Segment
where
    G: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    // row 0: centre; rows 1..=7: centre - h x_j; rows 8..=14: centre + h x_j
    g(center, &mut scratch[0..dim]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let (left, right) = scratch[dim..].split_at_mut(7 * dim);
        g(center - dx, &mut left[j * dim..(j + 1) * dim]);
        g(center + dx, &mut right[j * dim..(j + 1) * dim]);
    }

    let mut value = vec![0.0; dim];
    let mut max_err = 0.0f64;
    for c in 0..dim {
        let fc = scratch[c];
        let mut kron = WGK[7] * fc;
        let mut gauss = WG[3] * fc;
        let mut abs = WGK[7] * fc.abs();
        for j in 0..7 {
            let f1 = scratch[dim + j * dim + c];
            let f2 = scratch[8 * dim + j * dim + c];
            kron += WGK[j] * (f1 + f2);
            abs += WGK[j] * (f1.abs() + f2.abs());
            if j % 2 == 1 {
                gauss += WG[j / 2] * (f1 + f2);
            }
        }
        let mean = 0.5 * kron;
        let mut asc = WGK[7] * (fc - mean).abs();
        for j in 0..7 {
            let f1 = scratch[dim + j * dim + c];
            let f2 = scratch[8 * dim + j * dim + c];
            asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
        }
        let result = kron * half;
        let res_abs = abs * half.abs();
        let res_asc = asc * half.abs();
        let mut err = ((kron - gauss) * half).abs();
        if res_asc != 0.0 && err != 0.0 {
            err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
        }
        let round_off = 50.0 * f64::EPSILON * res_abs;
        if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && err < round_off {
            err = round_off;
        }
        if !result.is_finite() {
            err = f64::INFINITY;
        }
        value[c] = result;
        max_err = max_err.max(err);
    }
    Segment {
        lo,
        hi,
        value,
        error: max_err,
    }
}

/// Integrates a vector-valued `f` over `[0, inf)` with a fixed composite
/// 15-point Kronrod rule on uniform panels in `a`.
///
/// Panels have width `ln 2 / (panels_per_halving * rate)` and extend until the
/// envelope `exp(-rate a)` drops below `tail`. The node set depends only on
/// `rate`, so the result is a smooth function of any parameters inside `f`;
/// this is what finite-difference derivatives of a likelihood need.
pub fn integrate_fixed_panels_vec<F>(
    mut f: F,
    dim: usize,
    rate: f64,
    panels_per_halving: usize,
    tail: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("panel rate must be positive, got {rate}")));
    }
    if panels_per_halving == 0 || !(tail > 0.0 && tail < 1.0) {
        return Err(Error::Domain("invalid panel specification".into()));
    }
    let width = std::f64::consts::LN_2 / (panels_per_halving as f64 * rate);
    let n_panels = ((-tail.ln() / rate) / width).ceil() as usize;
    let mut out = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for j in 0..n_panels {
        let center = (j as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (node, &x) in XGK.iter().enumerate() {
            let w = WGK[node] * half;
            let offsets: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
            for &s in offsets {
                buf.iter_mut().for_each(|v| *v = 0.0);
                f(center + s * half * x, &mut buf);
                for (o, v) in out.iter_mut().zip(&buf) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(out)
}

/// Sums `term(start) + term(start + 1) + ...` until the geometric tail
/// estimate falls below `rel_tail_tol` times the partial sum.
pub fn sum_series<F>(mut term: F, start: u64, rel_tail_tol: f64) -> Result<f64>
where
    F: FnMut(u64) -> f64,
{
    const MIN_TERMS: u64 = 8;
    const MAX_TERMS: u64 = 10_000_000;
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut prev = f64::NAN;
    let mut n = 0u64;
    loop {
        let k = start + n;
        let t = term(k);
        if !t.is_finite() {
            return Err(Error::Numerical {
                context: format!("series term {k} is not finite"),
                estimate: sum,
                error_bound: f64::INFINITY,
            });
        }
        let y = t - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
        n += 1;
        if n >= MIN_TERMS {
            let ratio = (t / prev).abs();
            // Terms exactly zero past the first few: the series has terminated.
            if t == 0.0 && prev == 0.0 {
                return Ok(sum);
            }
            if ratio < 1.0 {
                let tail = t.abs() * ratio / (1.0 - ratio);
                if tail <= rel_tail_tol * sum.abs() {
                    return Ok(sum);
                }
            }
        }
        if n >= MAX_TERMS {
            return Err(Error::Numerical {
                context: "series did not show geometric decay".into(),
                estimate: sum,
                error_bound: f64::INFINITY,
            });
        }
        prev = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rate: f64) -> IntegrationSpec {
        IntegrationSpec::new(rate, 1e-10).unwrap()
    }

    #[test]
    fn density_normalization() {
        let v = integrate_semi_infinite(|a| 4.5 * (-4.5 * a).exp(), &spec(4.5)).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_two() {
        let v = integrate_semi_infinite(|a| a * (-a).exp(), &spec(1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        // an underestimated rate still converges
        let v = integrate_semi_infinite(|a| a * (-a).exp(), &spec(0.4)).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn survival_against_age_density() {
        let v = integrate_semi_infinite(|a| (-a).exp() * 4.5 * (-4.5 * a).exp(), &spec(4.5)).unwrap();
        assert!((v - 4.5 / 5.5).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let f = |a: f64| (a.sin() + 2.0) * (-0.7 * a).exp() * a.sqrt();
        let a = integrate_semi_infinite(f, &spec(0.7)).unwrap();
        let b = integrate_semi_infinite(f, &spec(0.7)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn linearity_and_tolerance_monotonicity() {
        let fs: [fn(f64) -> f64; 3] = [
            |a| (-2.0 * a).exp() * (1.0 + a * a),
            |a| (-2.0 * a).exp() * (3.0 * a).cos(),
            |a| 2.0 * (-2.0 * a).exp() - (-3.0 * a).exp() * a,
        ];
        let tol = 1e-10;
        for f in fs {
            for g in fs {
                let s = spec(2.0);
                let fg = integrate_semi_infinite(|a| f(a) + g(a), &s).unwrap();
                let sep = integrate_semi_infinite(f, &s).unwrap() + integrate_semi_infinite(g, &s).unwrap();
                assert!((fg - sep).abs() < 2.0 * tol);
            }
            let mut prev_tol = 1e-6;
            let mut prev = integrate_semi_infinite(f, &IntegrationSpec::new(2.0, prev_tol).unwrap()).unwrap();
            for _ in 0..10 {
                let t = prev_tol / 2.0;
                let cur = integrate_semi_infinite(f, &IntegrationSpec::new(2.0, t).unwrap()).unwrap();
                assert!((cur - prev).abs() <= prev_tol);
                prev = cur;
                prev_tol = t;
            }
        }
    }

    #[test]
    fn vector_integrand() {
        let v = integrate_semi_infinite_vec(
            |a, out| {
                out[0] = (-a).exp();
                out[1] = a * (-a).exp();
                out[2] = a * a * (-a).exp();
            },
            3,
            &spec(1.0),
        )
        .unwrap();
        for (x, e) in v.iter().zip([1.0, 1.0, 2.0]) {
            assert!((x - e).abs() < 1e-9);
        }
    }

    #[test]
    fn non_convergence_reports_estimate() {
        let s = IntegrationSpec::new(1.0, 1e-14).unwrap().with_max_subdivisions(3);
        let err = integrate_semi_infinite(|a| (50.0 * a).sin().abs() * (-a).exp(), &s).unwrap_err();
        match err {
            Error::Numerical { estimate, error_bound, .. } => {
                assert!(estimate > 0.0 && error_bound > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixed_panels_match_adaptive() {
        let f = |a: f64, out: &mut [f64]| {
            let q = 0.6 * 2.0 * ((-a).exp() - (-2.0 * a).exp());
            out[0] = 7.0 * (-7.0 * a).exp() * q.powi(5);
            out[1] = 7.0 * (-7.0 * a).exp() * (1.0 - q).powi(30);
        };
        let fixed = integrate_fixed_panels_vec(f, 2, 7.0, 2, 1e-15).unwrap();
        let adaptive =
            integrate_semi_infinite_vec(f, 2, &IntegrationSpec::new(7.0, 1e-13).unwrap()).unwrap();
        for (x, y) in fixed.iter().zip(&adaptive) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn series_examples() {
        let s = sum_series(|k| 0.5f64.powi(k as i32), 0, 1e-12).unwrap();
        assert!((s - 2.0).abs() < 1e-11);
        let g = crate::degree::DegreeModel::geometric(1.0).unwrap();
        let s = sum_series(|k| g.pmf(k as u32), 0, 1e-12).unwrap();
        assert!((s - 1.0).abs() < 1e-11);
        let nb = crate::degree::DegreeModel::neg_binomial(0.16, 4.5).unwrap();
        let m = sum_series(|k| k as f64 * nb.pmf(k as u32), 0, 1e-12).unwrap();
        assert!((m - 4.5).abs() < 1e-6);
        assert!(sum_series(|_| 1.0, 0, 1e-12).is_err());
    }
}
