//! Two-boundary Wiener first-passage-time density, choice probabilities and an
//! Euler–Maruyama trajectory sampler.
//!
//! The process starts at `start_frac * boundary`, drifts at `drift` with unit
//! diffusion coefficient, and stops at `0` (choice 0) or `boundary` (choice 1).
//! The observed response time adds `nondecision` to the hitting time.
//!
//! The lower-boundary density is
//!
//! ```text
//! f(t) = a^-2 exp(-v a w - v^2 s / 2) phi(s / a^2, w),   s = t - tau
//! ```
//!
//! where `phi` is the standardized zero-drift density, evaluated with either the
//! small-time or the large-time series depending on which needs fewer terms.
//! The upper-boundary density uses the reflection `(w, v) -> (1 - w, -v)`.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, exp, ln, sqrt};

/// Default series truncation tolerance.
pub const DEFAULT_EPS: f64 = 1e-10;

const PI: f64 = core::f64::consts::PI;
const MAX_TERMS: usize = 200;

/// Parameters of one drift-diffusion state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdmParams {
    /// Boundary separation `α > 0`.
    pub boundary: f64,
    /// Relative starting point `β ∈ (0, 1)`.
    pub start_frac: f64,
    /// Drift rate `v` (evidence units per second).
    pub drift: f64,
    /// Non-decision time `τ > 0` in seconds.
    pub nondecision: f64,
}

impl DdmParams {
    pub fn new(boundary: f64, start_frac: f64, drift: f64, nondecision: f64) -> Result<Self> {
        let p = Self {
            boundary,
            start_frac,
            drift,
            nondecision,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boundary.is_finite() && self.boundary > 0.0) {
            return Err(Error::InvalidParameter {
                name: "boundary",
                value: self.boundary,
            });
        }
        if !(self.start_frac > 0.0 && self.start_frac < 1.0) {
            return Err(Error::InvalidParameter {
                name: "start_frac",
                value: self.start_frac,
            });
        }
        if !self.drift.is_finite() {
            return Err(Error::InvalidParameter {
                name: "drift",
                value: self.drift,
            });
        }
        if !(self.nondecision.is_finite() && self.nondecision > 0.0) {
            return Err(Error::InvalidParameter {
                name: "nondecision",
                value: self.nondecision,
            });
        }
        Ok(())
    }

    /// Parameters of the mirrored process, whose lower boundary is this process's upper one.
    #[inline]
    pub fn reflected(&self) -> Self {
        Self {
            boundary: self.boundary,
            start_frac: 1.0 - self.start_frac,
            drift: -self.drift,
            nondecision: self.nondecision,
        }
    }
}

/// Log density together with its partial derivatives in the four DDM parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogDensityGrad {
    pub value: f64,
    pub d_boundary: f64,
    pub d_start: f64,
    pub d_drift: f64,
    pub d_nondecision: f64,
}

/// `log phi(u, w)` and its partials in `u` and `w`.
#[derive(Debug, Clone, Copy)]
struct PhiLog {
    value: f64,
    d_u: f64,
    d_w: f64,
}

/// Number of terms each series needs for absolute error `eps` (Navarro–Fuss bounds).
#[inline]
fn term_counts(u: f64, eps: f64) -> (f64, f64) {
    let large = if PI * u * eps < 1.0 {
        let k = sqrt(-2.0 * ln(PI * u * eps) / (PI * PI * u));
        k.max(1.0 / (PI * sqrt(u)))
    } else {
        1.0 / (PI * sqrt(u))
    };
    let small = if 2.0 * sqrt(2.0 * PI * u) * eps < 1.0 {
        let k = 2.0 + sqrt(-2.0 * u * ln(2.0 * sqrt(2.0 * PI * u) * eps));
        k.max(sqrt(u) + 1.0)
    } else {
        2.0
    };
    (small, large)
}

/// Small-time representation with the k = 0 Gaussian factor pulled out of the sum.
fn phi_small(u: f64, w: f64, n_terms: f64, eps: f64) -> Option<PhiLog> {
    let half_range = math::ceil((n_terms - 1.0) / 2.0).max(1.0) as usize;
    let inv_2u = 0.5 / u;
    // k = 0
    let mut s0 = w;
    let mut s_u = w * w * w;
    let mut s_w = 1.0 - w * w / u;
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        let mut step_mag = 0.0f64;
        for c in [w + 2.0 * kf, w - 2.0 * kf] {
            let e = exp(-(c * c - w * w) * inv_2u);
            let term = c * e;
            s0 += term;
            s_u += c * c * term;
            s_w += (1.0 - c * c / u) * e;
            step_mag = step_mag.max(term.abs()).max(e * (1.0 + c * c / u));
        }
        if (k >= half_range && step_mag <= eps * s0.abs()) || k >= MAX_TERMS {
            break;
        }
        k += 1;
    }
    if !(s0 > 0.0) {
        return None;
    }
    let value = -0.5 * math::LN_2PI - 1.5 * ln(u) - w * w * inv_2u + ln(s0);
    Some(PhiLog {
        value,
        d_u: -1.5 / u + s_u / (2.0 * u * u * s0),
        d_w: s_w / s0,
    })
}

/// Large-time representation with the k = 1 exponential factor pulled out of the sum.
fn phi_large(u: f64, w: f64, n_terms: f64, eps: f64) -> Option<PhiLog> {
    let min_terms = math::ceil(n_terms).max(1.0) as usize;
    let h = 0.5 * PI * PI * u;
    let x = PI * w;
    let (sin1, cos1) = (math::sin(x), math::cos(x));
    let two_cos = 2.0 * cos1;
    // sin(kx), cos(kx) by the Chebyshev recurrence.
    let (mut sin_prev, mut sin_k) = (0.0, sin1);
    let (mut cos_prev, mut cos_k) = (1.0, cos1);
    let mut s0 = 0.0;
    let mut s_u = 0.0;
    let mut s_w = 0.0;
    let mut k = 1usize;
    loop {
        let kf = k as f64;
        let e = exp(-(kf * kf - 1.0) * h);
        s0 += kf * e * sin_k;
        s_u += kf * kf * kf * e * sin_k;
        s_w += kf * kf * e * cos_k;
        let bound = kf * kf * kf * e;
        if (k >= min_terms && bound <= eps * s0.abs()) || k >= MAX_TERMS {
            break;
        }
        let sin_next = two_cos * sin_k - sin_prev;
        sin_prev = sin_k;
        sin_k = sin_next;
        let cos_next = two_cos * cos_k - cos_prev;
        cos_prev = cos_k;
        cos_k = cos_next;
        k += 1;
    }
    if !(s0 > 0.0) {
        return None;
    }
    Some(PhiLog {
        value: ln(PI) - h + ln(s0),
        d_u: -0.5 * PI * PI * s_u / s0,
        d_w: PI * s_w / s0,
    })
}

fn log_phi(u: f64, w: f64, eps: f64) -> PhiLog {
    let (small, large) = term_counts(u, eps);
    if small < large {
        phi_small(u, w, small, eps)
            .or_else(|| phi_large(u, w, large, eps))
            .unwrap_or(PhiLog {
                value: f64::NEG_INFINITY,
                d_u: 0.0,
                d_w: 0.0,
            })
    } else {
        phi_large(u, w, large, eps)
            .or_else(|| phi_small(u, w, small, eps))
            .unwrap_or(PhiLog {
                value: f64::NEG_INFINITY,
                d_u: 0.0,
                d_w: 0.0,
            })
    }
}

/// Lower-boundary log density and gradient; no validation.
#[inline]
fn lower_log_density_grad(t: f64, p: &DdmParams, eps: f64) -> LogDensityGrad {
    let a = p.boundary;
    let w = p.start_frac;
    let v = p.drift;
    let s = t - p.nondecision;
    if !(s > 0.0) {
        return LogDensityGrad {
            value: f64::NEG_INFINITY,
            ..Default::default()
        };
    }
    let u = s / (a * a);
    let phi = log_phi(u, w, eps);
    if phi.value == f64::NEG_INFINITY {
        return LogDensityGrad {
            value: f64::NEG_INFINITY,
            ..Default::default()
        };
    }
    LogDensityGrad {
        value: -2.0 * ln(a) - v * a * w - 0.5 * v * v * s + phi.value,
        d_boundary: -2.0 / a - v * w - 2.0 * u / a * phi.d_u,
        d_start: -v * a + phi.d_w,
        d_drift: -a * w - v * s,
        d_nondecision: 0.5 * v * v - phi.d_u / (a * a),
    }
}

/// Log density and gradient with an explicit truncation tolerance. Parameters are not
/// validated; `t <= τ` yields `-inf` with a zero gradient.
#[inline]
pub fn log_density_grad_eps(t: f64, upper: bool, p: &DdmParams, eps: f64) -> LogDensityGrad {
    if upper {
        let g = lower_log_density_grad(t, &p.reflected(), eps);
        LogDensityGrad {
            value: g.value,
            d_boundary: g.d_boundary,
            d_start: -g.d_start,
            d_drift: -g.d_drift,
            d_nondecision: g.d_nondecision,
        }
    } else {
        lower_log_density_grad(t, p, eps)
    }
}

/// Log density and gradient at the default tolerance, unvalidated (hot path).
#[inline]
pub fn log_density_grad(t: f64, upper: bool, p: &DdmParams) -> LogDensityGrad {
    log_density_grad_eps(t, upper, p, DEFAULT_EPS)
}

/// Log density only, unvalidated (hot path).
#[inline]
pub fn log_density(t: f64, upper: bool, p: &DdmParams) -> f64 {
    log_density_grad_eps(t, upper, p, DEFAULT_EPS).value
}

/// Log of the joint density of hitting boundary `choice` (1 = upper) at response time `t`.
///
/// Returns `-inf` when `t <= τ`. Non-finite `t` or invalid parameters are errors.
pub fn wfpt_log_density(t: f64, choice: u8, p: &DdmParams) -> Result<f64> {
    wfpt_log_density_eps(t, choice, p, DEFAULT_EPS)
}

pub fn wfpt_log_density_eps(t: f64, choice: u8, p: &DdmParams, eps: f64) -> Result<f64> {
    p.validate()?;
    if !t.is_finite() {
        return Err(Error::InvalidParameter { name: "rt", value: t });
    }
    if choice > 1 {
        return Err(Error::InvalidParameter {
            name: "choice",
            value: choice as f64,
        });
    }
    Ok(log_density_grad_eps(t, choice == 1, p, eps).value)
}

/// Probability that the process is absorbed at the upper boundary.
pub fn choice_probability(p: &DdmParams) -> Result<f64> {
    p.validate()?;
    Ok(upper_probability(p.boundary, p.start_frac, p.drift))
}

/// `(1 - e^{-2vβα}) / (1 - e^{-2vα})`, with the `v → 0` limit `β`.
#[inline]
pub fn upper_probability(boundary: f64, start_frac: f64, drift: f64) -> f64 {
    if drift == 0.0 {
        return start_frac;
    }
    if drift < 0.0 {
        return 1.0 - upper_probability(boundary, 1.0 - start_frac, -drift);
    }
    // Both exponents are non-positive, so expm1 is accurate for small drift and
    // saturates cleanly for large drift.
    let num = -math::expm1(-2.0 * drift * start_frac * boundary);
    let den = -math::expm1(-2.0 * drift * boundary);
    if den == 0.0 {
        return start_frac;
    }
    num / den
}

/// Settings for the trajectory sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Euler–Maruyama step (seconds).
    pub dt: f64,
    /// Maximum decision time before the path is discarded and redrawn.
    pub horizon: f64,
    /// Redraw attempts before giving up.
    pub max_attempts: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            horizon: 30.0,
            max_attempts: 1000,
        }
    }
}

/// One simulated decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdmSample {
    pub choice: u8,
    /// Total response time including the non-decision time.
    pub rt: f64,
    /// Paths discarded for exceeding the horizon before this one finished.
    pub resampled: u32,
}

// exp(-2 * 18) is below double precision relative to 1, so farther pairs never cross.
const BRIDGE_GATE: f64 = 18.0;

/// Draw `(choice, rt)` by Euler–Maruyama simulation of the diffusion.
///
/// Between grid points the Brownian-bridge crossing probability
/// `exp(-2 d0 d1 / dt)` is checked, which removes most of the discretization
/// overshoot at the boundaries.
pub fn sample_ddm<R: Rng + ?Sized>(p: &DdmParams, cfg: &SamplerConfig, rng: &mut R) -> Result<DdmSample> {
    p.validate()?;
    let a = p.boundary;
    let dt = cfg.dt;
    let sd = sqrt(dt);
    let mean_step = p.drift * dt;
    let max_steps = math::ceil(cfg.horizon / dt) as u64;
    let gate = BRIDGE_GATE * dt;
    for attempt in 0..cfg.max_attempts {
        let mut x = p.start_frac * a;
        let mut n = 0u64;
        while n < max_steps {
            let z: f64 = StandardNormal.sample(rng);
            let x_new = x + mean_step + sd * z;
            n += 1;
            let hit = if x_new >= a {
                Some(1)
            } else if x_new <= 0.0 {
                Some(0)
            } else {
                let du = (a - x) * (a - x_new);
                let dl = x * x_new;
                if du < gate && rng.random::<f64>() < exp(-2.0 * du / dt) {
                    Some(1)
                } else if dl < gate && rng.random::<f64>() < exp(-2.0 * dl / dt) {
                    Some(0)
                } else {
                    None
                }
            };
            if let Some(choice) = hit {
                return Ok(DdmSample {
                    choice,
                    rt: p.nondecision + n as f64 * dt,
                    resampled: attempt,
                });
            }
            x = x_new;
        }
    }
    Err(Error::InvalidParameter {
        name: "horizon",
        value: cfg.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(a: f64, w: f64, v: f64, t0: f64) -> DdmParams {
        DdmParams::new(a, w, v, t0).unwrap()
    }

    #[test]
    fn zero_density_before_nondecision() {
        let q = p(1.5, 0.5, 1.0, 0.14);
        assert_eq!(wfpt_log_density(0.10, 1, &q).unwrap(), f64::NEG_INFINITY);
        assert_eq!(wfpt_log_density(0.14, 0, &q).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_parameters_are_errors() {
        let bad = DdmParams {
            boundary: f64::NAN,
            start_frac: 0.5,
            drift: 0.0,
            nondecision: 0.1,
        };
        assert!(wfpt_log_density(1.0, 1, &bad).is_err());
        assert!(DdmParams::new(1.0, 1.0, 0.0, 0.1).is_err());
        assert!(DdmParams::new(1.0, 0.5, f64::INFINITY, 0.1).is_err());
        assert!(wfpt_log_density(f64::NAN, 1, &p(1.0, 0.5, 0.0, 0.1)).is_err());
    }

    #[test]
    fn reflection_symmetry_is_exact() {
        for &t in &[0.15, 0.2, 0.5, 1.0, 3.0, 12.0] {
            for &(a, w, v) in &[(2.0, 0.3, 1.25), (0.4, 0.55, -2.0), (1.1, 0.5, 4.5)] {
                let up = wfpt_log_density(t, 1, &p(a, w, v, 0.14)).unwrap();
                let lo = wfpt_log_density(t, 0, &p(a, 1.0 - w, -v, 0.14)).unwrap();
                assert_eq!(up, lo);
            }
        }
    }

    #[test]
    fn choice_probability_examples() {
        assert_eq!(choice_probability(&p(2.0, 0.5, 0.0, 0.1)).unwrap(), 0.5);
        let c = choice_probability(&p(2.0, 0.5, 1.0, 0.1)).unwrap();
        assert!((c - 0.8808).abs() < 0.002);
        let big = choice_probability(&p(2.0, 0.25, 1e6, 0.1)).unwrap();
        assert!((big - 1.0).abs() < 1e-15);
        // small drift approaches β smoothly
        let tiny = choice_probability(&p(2.0, 0.3, 1e-12, 0.1)).unwrap();
        assert!((tiny - 0.3).abs() < 1e-10);
        let neg = choice_probability(&p(2.0, 0.3, -1e6, 0.1)).unwrap();
        assert!(neg.abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let base = p(1.3, 0.42, 0.8, 0.2);
        for &t in &[0.23, 0.4, 1.2, 4.0] {
            for upper in [false, true] {
                let g = log_density_grad(t, upper, &base);
                let h = 1e-6;
                let fd = |f: &dyn Fn(f64) -> DdmParams, x: f64| {
                    (log_density(t, upper, &f(x + h)) - log_density(t, upper, &f(x - h))) / (2.0 * h)
                };
                let da = fd(&|x| DdmParams { boundary: x, ..base }, base.boundary);
                let dw = fd(&|x| DdmParams { start_frac: x, ..base }, base.start_frac);
                let dv = fd(&|x| DdmParams { drift: x, ..base }, base.drift);
                let dt = fd(&|x| DdmParams { nondecision: x, ..base }, base.nondecision);
                for (an, num) in [(g.d_boundary, da), (g.d_start, dw), (g.d_drift, dv), (g.d_nondecision, dt)] {
                    assert!(
                        (an - num).abs() < 1e-5 * (1.0 + num.abs()),
                        "t={t} upper={upper} {an} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn tiny_and_huge_decision_times_stay_finite() {
        let q = p(0.4, 0.5, 0.0, 0.14);
        let near = wfpt_log_density(0.14 + 1e-5, 1, &q).unwrap();
        assert!(near.is_finite() && near < -100.0);
        let far = wfpt_log_density(30.0, 0, &q).unwrap();
        assert!(far.is_finite() && far < -500.0);
        let fast = wfpt_log_density(40.0, 1, &p(2.0, 0.5, 4.5, 0.14)).unwrap();
        assert!(fast.is_finite());
    }

    #[test]
    fn sampler_is_deterministic_and_offset() {
        let q = p(2.0, 0.5, 1.0, 0.14);
        let cfg = SamplerConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..50)
                .map(|_| sample_ddm(&q, &cfg, &mut rng).unwrap())
                .collect::<alloc::vec::Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|s| s.rt > q.nondecision));
    }

    #[test]
    fn sampler_counts_horizon_resamples() {
        // Zero drift, boundaries 0.25 away: a 0.02 s horizon is often exceeded.
        let q = p(0.5, 0.5, 0.0, 0.1);
        let cfg = SamplerConfig {
            horizon: 0.02,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0;
        for _ in 0..5 {
            let s = sample_ddm(&q, &cfg, &mut rng).unwrap();
            assert!(s.rt - q.nondecision <= 0.02 + 1e-9);
            total += s.resampled;
        }
        assert!(total > 0);
    }
}
