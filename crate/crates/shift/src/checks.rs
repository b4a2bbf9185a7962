//! Fast invariant suite: density normalization, forward–backward against path
//! enumeration, and Gauss–Hermite moment exactness.

use std::time::Instant;

use rand::RngExt;
use serde::Serialize;
use shift_core::markov::{brute_force_posterior, forward_backward, HmmParams, PosteriorWeights, TransitionCoef};
use shift_core::quadrature::gauss_hermite;
use shift_core::rng::keyed_rng;
use shift_core::wiener::{choice_probability, log_density, DdmParams};

use crate::error::Result;

pub const BOUNDARIES: [f64; 4] = [0.4, 1.1, 1.5, 2.0];
pub const START_FRACS: [f64; 3] = [0.3, 0.5, 0.55];
pub const DRIFTS: [f64; 4] = [-2.0, 0.0, 1.25, 4.5];
const NONDECISION: f64 = 0.3;

pub const DENSITY_TOL: f64 = 1e-6;
pub const POSTERIOR_TOL: f64 = 1e-10;
pub const MOMENT_TOL: f64 = 1e-12;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed deviation, in the units of the tolerance.
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub seconds: f64,
}

fn report(name: &'static str, max_error: f64, tolerance: f64, cases: usize, start: Instant) -> CheckReport {
    CheckReport {
        name,
        passed: max_error <= tolerance,
        max_error,
        tolerance,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// `∫_τ^∞ density(t) dt` for one boundary, with `t = τ + s/(1-s)`.
pub fn boundary_mass(p: &DdmParams, upper: bool) -> f64 {
    let f = |s: f64| {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - s;
        let t = p.nondecision + s / u;
        log_density(t, upper, p).exp() / (u * u)
    };
    // Mass concentrates near the lower end; split there so the rule resolves the peak.
    let knot = 0.05;
    quadrature::double_exponential::integrate(f, 0.0, knot, 1e-12).integral
        + quadrature::double_exponential::integrate(f, knot, 1.0, 1e-12).integral
}

/// Total mass and upper-boundary mass against the closed-form choice probability.
pub fn density_normalization() -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &a in &BOUNDARIES {
        for &b in &START_FRACS {
            for &v in &DRIFTS {
                let p = DdmParams::new(a, b, v, NONDECISION)?;
                let upper = boundary_mass(&p, true);
                let lower = boundary_mass(&p, false);
                let exact = choice_probability(&p)?;
                worst = worst.max((upper + lower - 1.0).abs()).max((upper - exact).abs());
                cases += 1;
            }
        }
    }
    Ok(report("density_normalization", worst, DENSITY_TOL, cases, start))
}

fn max_posterior_gap(a: &PosteriorWeights, b: &PosteriorWeights) -> f64 {
    let zeta = a
        .zeta
        .iter()
        .zip(&b.zeta)
        .flat_map(|(x, y)| (0..2).map(move |l| (x[l] - y[l]).abs()));
    let xi =
        a.xi.iter()
            .zip(&b.xi)
            .flat_map(|(x, y)| (0..4).map(move |c| (x[c / 2][c % 2] - y[c / 2][c % 2]).abs()));
    let lm = (a.log_marginal - b.log_marginal).abs() / b.log_marginal.abs().max(1.0);
    zeta.chain(xi).fold(lm, f64::max)
}

/// Random chains and emissions; recursions against all `2^J` paths.
pub fn forward_backward_oracle(instances: usize, seed: u64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 0..instances {
        let mut rng = keyed_rng(seed, &[0x6662, n as u64]);
        let len = rng.random_range(1..=12usize);
        let p = rng.random_range(0..=2usize);
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut coef = || TransitionCoef {
            intercept: rng.random_range(-3.0..3.0),
            slopes: (0..p).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let (c0, c1) = (coef(), coef());
        let h = HmmParams::new(rng.random_range(0.02..0.98), c0, c1);
        let emissions: Vec<[f64; 2]> = (0..len)
            .map(|_| [rng.random_range(-8.0..3.0), rng.random_range(-8.0..3.0)])
            .collect();
        let fb = forward_backward(&emissions, &h, &x)?;
        let bf = brute_force_posterior(&emissions, &h, &x)?;
        worst = worst.max(max_posterior_gap(&fb, &bf));
    }
    Ok(report("forward_backward_oracle", worst, POSTERIOR_TOL, instances, start))
}

fn normal_moment(p: u32) -> f64 {
    if p % 2 == 1 {
        0.0
    } else {
        (1..p).step_by(2).map(|k| k as f64).product()
    }
}

/// Every monomial of total degree below `2R` per coordinate, for `R ≤ 10`, `d ≤ 2`.
/// Errors are scaled by the absolute moment of the same monomial.
pub fn quadrature_moments() -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 1..=10usize {
        for dim in 1..=2usize {
            let rule = gauss_hermite(n, dim)?;
            let top = 2 * n as u32;
            let powers: Vec<Vec<u32>> = if dim == 1 {
                (0..top).map(|p| vec![p]).collect()
            } else {
                (0..top).flat_map(|p| (0..top).map(move |q| vec![p, q])).collect()
            };
            for pw in powers {
                let (mut m, mut abs) = (0.0, 0.0);
                for r in 0..rule.len() {
                    let term: f64 = rule.node(r).iter().zip(&pw).map(|(z, &k)| z.powi(k as i32)).product();
                    m += rule.weights[r] * term;
                    abs += rule.weights[r] * term.abs();
                }
                let exact: f64 = pw.iter().map(|&k| normal_moment(k)).product();
                worst = worst.max((m - exact).abs() / abs.max(1.0));
                cases += 1;
            }
        }
    }
    Ok(report("quadrature_moments", worst, MOMENT_TOL, cases, start))
}

pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        density_normalization()?,
        forward_backward_oracle(200, seed)?,
        quadrature_moments()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_mass_of_symmetric_process_is_half() {
        let p = DdmParams::new(1.0, 0.5, 0.0, 0.2).unwrap();
        assert!((boundary_mass(&p, true) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn all_checks_pass() {
        for r in run_all(1).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
