//! The fundamental integral `∫ (1 − cos⟨t, x⟩) / ‖t‖^{p+1} dt = c_p ‖x‖`,
//! its generalization with truncated cosines, and two numerical checks:
//! direct integration of the identity itself, and a Monte Carlo estimate of
//! the characteristic-function form of the distance covariance.
//!
//! Both Monte Carlo routines share one importance proposal: a uniformly
//! random direction scaled by a half-Cauchy radius. In one dimension this is
//! exactly the standard Cauchy density. Its radial density decays like
//! `r^{-2}`, matching the `‖t‖^{-(p+1)}` weight, so the importance weights
//! stay bounded in every dimension.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{DcovError, Result};
use crate::estimators::{DCovEstimate, EstimatorKind};
use crate::numeric::{self, DoubleDouble, PI_DD};
use crate::rng::{blocks, stream_rng};
use crate::sample::PairedSample;

/// `c_p = π^{(p+1)/2} / Γ((p+1)/2)`.
///
/// Evaluated as a product of small double-double factors
/// (`c_{2k} = ∏ 2π/(2j−1)`, `c_{2k−1} = π ∏ π/j`), which keeps the result
/// correctly rounded and avoids the overflow of forming the gamma value.
pub fn fundamental_constant(p: usize) -> Result<f64> {
    if p == 0 {
        return Err(DcovError::Domain("dimension must be at least 1".into()));
    }
    let mut acc = DoubleDouble::ONE;
    if p.is_multiple_of(2) {
        let two_pi = PI_DD.mul_f64(2.0);
        for j in 1..=p / 2 {
            acc = acc.mul(two_pi.div_f64((2 * j - 1) as f64));
        }
    } else {
        acc = PI_DD;
        for j in 1..p.div_ceil(2) {
            acc = acc.mul(PI_DD.div_f64(j as f64));
        }
    }
    let c = acc.to_f64();
    if c.is_normal() {
        Ok(c)
    } else {
        Err(DcovError::Domain(format!(
            "c_{p} underflows double precision; use ln_fundamental_constant"
        )))
    }
}

/// `ln c_p`, usable for any dimension.
pub fn ln_fundamental_constant(p: usize) -> Result<f64> {
    if p == 0 {
        return Err(DcovError::Domain("dimension must be at least 1".into()));
    }
    let h = (p as f64 + 1.0) / 2.0;
    Ok(h * PI.ln() - libm::lgamma(h))
}

/// Surface area of the unit sphere in `R^p`.
fn sphere_area(p: usize) -> f64 {
    2.0 * PI.powf(p as f64 / 2.0) / numeric::gamma(p as f64 / 2.0)
}

/// Parameters of the generalized integral
/// `∫ (cos_m⟨t, x⟩ − cos⟨t, x⟩) / ‖t‖^{p+α} dt = C(p, α) ‖x‖^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralizedConstant {
    pub dimension: usize,
    pub exponent: f64,
    pub truncation_order: u32,
}

impl GeneralizedConstant {
    /// Validates `p ≥ 1`, `m ≥ 1` and the convergence band `2(m−1) < α < 2m`.
    pub fn new(dimension: usize, exponent: f64, truncation_order: u32) -> Result<Self> {
        let spec = Self {
            dimension,
            exponent,
            truncation_order,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(DcovError::Domain("dimension must be at least 1".into()));
        }
        if self.truncation_order == 0 {
            return Err(DcovError::Domain(
                "truncation order must be at least 1".into(),
            ));
        }
        let m = self.truncation_order as f64;
        let a = self.exponent;
        if !(a.is_finite() && 2.0 * (m - 1.0) < a && a < 2.0 * m) {
            return Err(DcovError::Domain(format!(
                "exponent {a} outside the convergence band ({}, {}) for m = {}",
                2.0 * (m - 1.0),
                2.0 * m,
                self.truncation_order
            )));
        }
        Ok(())
    }
}

/// `2 π^{p/2} Γ(1 − α/2) / (α 2^α Γ((p + α)/2))`.
pub fn generalized_constant(spec: &GeneralizedConstant) -> Result<f64> {
    spec.validate()?;
    let p = spec.dimension as f64;
    let a = spec.exponent;
    let head = 1.0 - a / 2.0;
    let tail = (p + a) / 2.0;
    if head <= 0.0 && head.fract() == 0.0 {
        return Err(DcovError::Domain(format!(
            "Γ(1 − α/2) has a pole at α = {a}"
        )));
    }

    // Integer exponents have integer or half-integer gamma arguments; those
    // are evaluated exactly so the m = 1, α = 1 case matches c_p to rounding.
    if a.fract() == 0.0 {
        if let (Some(g_head), Some(g_tail), Some(two_a)) = (
            numeric::gamma_half_integer(head),
            numeric::gamma_half_integer(tail),
            numeric::pow2_half_integer(a),
        ) {
            let num = numeric::pi_half_power(spec.dimension as u32)
                .mul_f64(2.0)
                .mul(g_head);
            let den = two_a.mul_f64(a).mul(g_tail);
            let v = num.div(den).to_f64();
            if v.is_normal() {
                return Ok(v);
            }
        }
    }

    let (lg_head, sign_head) = libm::lgamma_r(head);
    let (lg_tail, sign_tail) = libm::lgamma_r(tail);
    let ln = 2f64.ln() + 0.5 * p * PI.ln() + lg_head - a.abs().ln() - a * 2f64.ln() - lg_tail;
    let sign = f64::from(sign_head * sign_tail) * a.signum();
    Ok(sign * ln.exp())
}

/// `cos_m(v) = Σ_{j<m} (−1)^j v^{2j} / (2j)!`. `m = 0` gives the empty sum.
pub fn truncated_cos(m: u32, v: f64) -> f64 {
    let v2 = v * v;
    let mut term = 1.0;
    let mut sum = 0.0;
    for j in 0..m {
        if j > 0 {
            let k = 2.0 * j as f64;
            term *= -v2 / ((k - 1.0) * k);
        }
        sum += term;
    }
    sum
}

/// How much work a numerical check of the fundamental integral may spend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntegralBudget {
    /// Absolute tolerance for deterministic quadrature (one dimension only).
    Tolerance(f64),
    /// Number of importance samples.
    Samples(usize),
}

/// Numerical value of the fundamental integral next to its closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralCheck {
    pub dimension: usize,
    pub argument: Vec<f64>,
    pub numeric_estimate: f64,
    pub closed_form: f64,
    /// Monte Carlo standard error; 0 for quadrature.
    pub standard_error: f64,
    /// Number of importance samples; 0 for quadrature.
    pub sample_count: usize,
    /// Deterministic error bound (quadrature error estimate plus tail bound);
    /// 0 for Monte Carlo.
    pub error_bound: f64,
}

impl IntegralCheck {
    pub fn abs_error(&self) -> f64 {
        (self.numeric_estimate - self.closed_form).abs()
    }
}

/// Numerically evaluates the fundamental integral at `x ∈ R^p`.
///
/// With [`IntegralBudget::Tolerance`] (p = 1 only) the integral is split at a
/// cutoff `T`: adaptive quadrature covers `[−T, T]`; beyond it the integral
/// equals `2/T` plus an oscillatory remainder bounded by `4/(|x| T²)`, and
/// `T` is chosen so that bound is a tenth of the tolerance. With
/// [`IntegralBudget::Samples`] an importance-sampling estimate is returned.
pub fn verify_fundamental_integral(
    p: usize,
    x: &[f64],
    budget: IntegralBudget,
    seed: u64,
) -> Result<IntegralCheck> {
    if p == 0 {
        return Err(DcovError::Domain("dimension must be at least 1".into()));
    }
    if x.len() != p {
        return Err(DcovError::DimensionMismatch {
            expected: p,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DcovError::NonFinite { block: "x", row: 0 });
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let closed_form = fundamental_constant(p)? * norm;
    let mut check = IntegralCheck {
        dimension: p,
        argument: x.to_vec(),
        numeric_estimate: 0.0,
        closed_form,
        standard_error: 0.0,
        sample_count: 0,
        error_bound: 0.0,
    };

    match budget {
        IntegralBudget::Tolerance(tol) => {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(DcovError::InvalidArgument(format!(
                    "quadrature tolerance must be positive, got {tol}"
                )));
            }
            if p != 1 {
                return Err(DcovError::InvalidArgument(
                    "quadrature is only available for p = 1; use a sample budget".into(),
                ));
            }
            if norm > 0.0 {
                let (estimate, bound) = quadrature_1d(norm, tol);
                check.numeric_estimate = estimate;
                check.error_bound = bound;
            }
        }
        IntegralBudget::Samples(samples) => {
            if samples == 0 {
                return Err(DcovError::InvalidArgument(
                    "sample budget must be positive".into(),
                ));
            }
            check.sample_count = samples;
            if norm > 0.0 {
                let (mean, se) = importance_mean(samples, seed, |rng| {
                    let (dir, r) = radial_cauchy(rng, p);
                    let c: f64 = dir.iter().zip(x).map(|(u, v)| u * v).sum();
                    let half = 0.5 * r * c;
                    let s = half.sin();
                    // (1 − cos rc) / r^{p+1} divided by the proposal density.
                    sphere_area(p) * PI * (1.0 + r * r) * s * s / (r * r)
                });
                check.numeric_estimate = mean;
                check.standard_error = se;
            }
        }
    }
    Ok(check)
}

fn quadrature_1d(x: f64, tol: f64) -> (f64, f64) {
    let cutoff = (40.0 / (x * tol)).sqrt();
    let half_period = PI / x;
    let panels = ((cutoff / half_period).ceil() as usize).clamp(1, 50_000_000);
    let breaks: Vec<f64> = (0..=panels)
        .map(|k| cutoff * k as f64 / panels as f64)
        .collect();
    let integrand = |t: f64| {
        if t == 0.0 {
            0.5 * x * x
        } else {
            let s = (0.5 * t * x).sin();
            2.0 * s * s / (t * t)
        }
    };
    let q = numeric::integrate_panels(&integrand, &breaks, 0.05 * tol, 4 * panels + 1000);
    let estimate = 2.0 * q.value + 2.0 / cutoff;
    let bound = 2.0 * q.error + 4.0 / (x * cutoff * cutoff);
    (estimate, bound)
}

/// Direction uniform on the sphere in `R^d` and a half-Cauchy radius.
fn radial_cauchy<R: Rng + ?Sized>(rng: &mut R, d: usize) -> (Vec<f64>, f64) {
    let mut dir: Vec<f64> = Vec::with_capacity(d);
    if d == 1 {
        dir.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
    } else {
        loop {
            dir.clear();
            dir.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-300 {
                dir.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    let u: f64 = rng.random();
    (dir, (0.5 * PI * u).tan())
}

/// Mean and standard error of `draw` over `samples` draws, computed in
/// fixed-size blocks with per-block streams.
fn importance_mean<F>(samples: usize, seed: u64, draw: F) -> (f64, f64)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let parts: Vec<(f64, f64)> = blocks(samples)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(b, range)| {
            let mut rng = stream_rng(seed, b);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in range {
                let w = draw(&mut rng);
                s += w;
                s2 += w * w;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = parts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(c, d)| (a + c, b + d));
    let n = samples as f64;
    let mean = s / n;
    let var = if samples > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of `V²(X, Y)` from its characteristic-function form,
/// with the empirical characteristic functions of `sample` plugged in.
///
/// The estimate converges to the V-statistic of the sample, which differs
/// from the unbiased U-statistic by `O(1/n)`.
pub fn dcov_sq_cf_mc(sample: &PairedSample, mc_samples: usize, seed: u64) -> Result<DCovEstimate> {
    sample.require(2)?;
    if mc_samples == 0 {
        return Err(DcovError::InvalidArgument(
            "Monte Carlo sample count must be positive".into(),
        ));
    }
    let (n, p, q) = (sample.n(), sample.p(), sample.q());
    let area_p = sphere_area(p);
    let area_q = sphere_area(q);
    let norm = fundamental_constant(p)? * fundamental_constant(q)?;
    let inv_n = 1.0 / n as f64;

    let (mean, se) = importance_mean(mc_samples, seed, |rng| {
        let (us, rs) = radial_cauchy(rng, p);
        let (ut, rt) = radial_cauchy(rng, q);
        let (mut cx, mut sx, mut cy, mut sy, mut cxy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let a = rs * dot(&us, sample.x().row(i));
            let b = rt * dot(&ut, sample.y().row(i));
            let (sa, ca) = a.sin_cos();
            let (sb, cb) = b.sin_cos();
            cx += ca;
            sx += sa;
            cy += cb;
            sy += sb;
            cxy += ca * cb - sa * sb;
            sxy += sa * cb + ca * sb;
        }
        let (cx, sx, cy, sy) = (cx * inv_n, sx * inv_n, cy * inv_n, sy * inv_n);
        let re = cxy * inv_n - (cx * cy - sx * sy);
        let im = sxy * inv_n - (sx * cy + cx * sy);
        let w_s = area_p * PI * (1.0 + rs * rs) / (2.0 * rs * rs);
        let w_t = area_q * PI * (1.0 + rt * rt) / (2.0 * rt * rt);
        (re * re + im * im) * w_s * w_t
    });
    Ok(DCovEstimate {
        value: mean / norm,
        kind: EstimatorKind::CfMonteCarlo,
        n,
        p,
        q,
        standard_error: Some(se / norm),
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_small_dimensions() {
        assert_eq!(fundamental_constant(1).unwrap(), PI);
        // Γ(3/2) = √π/2, Γ(2) = 1.
        assert_eq!(fundamental_constant(2).unwrap(), 2.0 * PI);
        assert_eq!(fundamental_constant(3).unwrap(), PI * PI);
        assert!(matches!(fundamental_constant(0), Err(DcovError::Domain(_))));
    }

    #[test]
    fn log_constant_agrees() {
        for p in [1usize, 5, 40, 100] {
            let c = fundamental_constant(p).unwrap();
            let l = ln_fundamental_constant(p).unwrap();
            assert!((c.ln() - l).abs() < 1e-12 * l.abs().max(1.0));
        }
        assert!(ln_fundamental_constant(5000).unwrap().is_finite());
    }

    #[test]
    fn generalized_reduces_for_unit_exponent() {
        let g = generalized_constant(&GeneralizedConstant::new(1, 1.0, 1).unwrap()).unwrap();
        assert_eq!(g, PI);
        let g = generalized_constant(&GeneralizedConstant::new(2, 1.0, 1).unwrap()).unwrap();
        assert_eq!(g, 2.0 * PI);
    }

    #[test]
    fn generalized_domain_errors() {
        assert!(GeneralizedConstant::new(1, 2.0, 1).is_err());
        assert!(GeneralizedConstant::new(1, 0.0, 1).is_err());
        assert!(GeneralizedConstant::new(1, 1.0, 2).is_err());
        assert!(GeneralizedConstant::new(1, 4.0, 2).is_err());
        assert!(GeneralizedConstant::new(0, 1.0, 1).is_err());
        let bad = GeneralizedConstant {
            dimension: 1,
            exponent: 2.0,
            truncation_order: 1,
        };
        assert!(generalized_constant(&bad).is_err());
    }

    #[test]
    fn generalized_non_integer_exponent_is_continuous() {
        let at =
            |a: f64| generalized_constant(&GeneralizedConstant::new(3, a, 1).unwrap()).unwrap();
        let exact = at(1.0);
        assert!((at(1.0 + 1e-9) - exact).abs() < 1e-6);
        assert!(at(0.5) > 0.0 && at(1.5) > 0.0);
    }

    #[test]
    fn truncated_cosine_examples() {
        assert_eq!(truncated_cos(1, 7.3), 1.0);
        assert_eq!(truncated_cos(2, 2.0), -1.0);
        assert!((truncated_cos(20, 1.0) - 1f64.cos()).abs() < 1e-12);
        assert_eq!(truncated_cos(0, 3.0), 0.0);
    }

    #[test]
    fn truncated_cosine_converges() {
        for v in [-10.0, -3.3, 0.4, 2.0, 7.5, 10.0] {
            let mut best = f64::INFINITY;
            for m in 1..=60 {
                let err = (truncated_cos(m, v) - f64::cos(v)).abs();
                best = best.min(err);
            }
            assert!(best < 1e-10, "v = {v}: best error {best}");
        }
    }

    #[test]
    fn quadrature_one_dimension() {
        let c = verify_fundamental_integral(1, &[2.0], IntegralBudget::Tolerance(1e-8), 0).unwrap();
        assert!(c.abs_error() <= 1e-8, "{c:?}");
        assert!(c.abs_error() <= c.error_bound + 1e-12);
        assert_eq!(c.standard_error, 0.0);
        assert_eq!(c.sample_count, 0);
        assert_eq!(c.closed_form, 2.0 * PI);
    }

    #[test]
    fn zero_argument_gives_zero() {
        for p in 1..=4 {
            let x = vec![0.0; p];
            let c = verify_fundamental_integral(p, &x, IntegralBudget::Samples(1000), 1).unwrap();
            assert_eq!(c.numeric_estimate, 0.0);
            assert_eq!(c.closed_form, 0.0);
        }
        let c = verify_fundamental_integral(1, &[0.0], IntegralBudget::Tolerance(1e-6), 1).unwrap();
        assert_eq!(c.numeric_estimate, 0.0);
    }

    #[test]
    fn integral_argument_errors() {
        assert!(matches!(
            verify_fundamental_integral(2, &[1.0], IntegralBudget::Samples(10), 0),
            Err(DcovError::DimensionMismatch { .. })
        ));
        assert!(verify_fundamental_integral(1, &[1.0], IntegralBudget::Samples(0), 0).is_err());
        assert!(verify_fundamental_integral(1, &[1.0], IntegralBudget::Tolerance(0.0), 0).is_err());
        assert!(
            verify_fundamental_integral(2, &[1.0, 0.0], IntegralBudget::Tolerance(1e-6), 0)
                .is_err()
        );
    }

    #[test]
    fn monte_carlo_two_dimensions() {
        let c = verify_fundamental_integral(2, &[1.0, 0.0], IntegralBudget::Samples(1_000_000), 11)
            .unwrap();
        assert!(c.abs_error() <= 3.0 * c.standard_error, "{c:?}");
        assert!(c.standard_error > 0.0);
    }

    #[test]
    fn monte_carlo_is_homogeneous() {
        let x = [0.3, -0.7, 0.2];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = verify_fundamental_integral(3, &x, IntegralBudget::Samples(200_000), 5).unwrap();
        let b = verify_fundamental_integral(3, &x2, IntegralBudget::Samples(200_000), 6).unwrap();
        let se = (4.0 * a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        assert!((b.numeric_estimate - 2.0 * a.numeric_estimate).abs() <= 3.0 * se);
        let qa =
            verify_fundamental_integral(1, &[0.8], IntegralBudget::Tolerance(1e-7), 0).unwrap();
        let qb =
            verify_fundamental_integral(1, &[1.6], IntegralBudget::Tolerance(1e-7), 0).unwrap();
        assert!(
            (qb.numeric_estimate - 2.0 * qa.numeric_estimate).abs()
                <= 2.0 * qa.error_bound + qb.error_bound
        );
    }

    #[test]
    fn cf_estimate_vanishes_for_constant_y() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = PairedSample::from_columns(&x, &[2.5; 30]).unwrap();
        let e = dcov_sq_cf_mc(&s, 5000, 3).unwrap();
        assert!(e.value.abs() < 1e-12, "{e:?}");
        assert_eq!(e.kind, EstimatorKind::CfMonteCarlo);
    }

    #[test]
    fn cf_estimate_on_two_points_is_finite() {
        let s = PairedSample::from_columns(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let e = dcov_sq_cf_mc(&s, 20_000, 3).unwrap();
        assert!(e.value.is_finite() && e.value >= 0.0);
        assert!(dcov_sq_cf_mc(&s, 0, 3).is_err());
        let one = PairedSample::from_columns(&[0.0], &[0.0]).unwrap();
        assert!(dcov_sq_cf_mc(&one, 10, 3).is_err());
    }

    #[test]
    fn cf_estimate_is_deterministic_across_pools() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.91).cos()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let s = PairedSample::from_columns(&x, &y).unwrap();
        let a = crate::rng::with_threads(1, || dcov_sq_cf_mc(&s, 3000, 9).unwrap());
        let b = crate::rng::with_threads(3, || dcov_sq_cf_mc(&s, 3000, 9).unwrap());
        assert_eq!(a, b);
    }
}
