//! Limited-memory BFGS with a backtracking Armijo line search and a trust
//! radius capping the step length.
//!
//! The returned point never has a larger objective than the starting point.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by less than `f_rel_tol · max(|f|, 1)`.
    pub f_rel_tol: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
    pub min_radius: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            memory: 8,
            grad_tol: 1e-6,
            f_rel_tol: 1e-12,
            initial_radius: 1.0,
            max_radius: 10.0,
            min_radius: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// The trust radius shrank below its minimum without an acceptable step.
    LineSearchFailed,
    /// The objective was not finite at the start; the start is returned.
    NonFiniteStart,
}

impl Status {
    pub fn is_failure(self) -> bool {
        matches!(self, Status::LineSearchFailed | Status::NonFiniteStart)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    /// Trust radius at exit; reusable as the next solve's initial radius.
    pub radius: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `fg`, which returns the objective and writes the gradient into its second argument.
pub fn lbfgs<F>(mut fg: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    let mut radius = opts.initial_radius.min(opts.max_radius);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            f,
            grad: g,
            iterations: 0,
            evaluations,
            status: Status::NonFiniteStart,
            radius,
        };
    }
    if n == 0 {
        return Minimum {
            x,
            f,
            grad: g,
            iterations: 0,
            evaluations,
            status: Status::GradientTolerance,
            radius,
        };
    }

    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if sup_norm(&g) <= opts.grad_tol {
            status = Status::GradientTolerance;
            break;
        }
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= alpha[i] * yi);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[i] - beta) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = dot(&g, &d);
        }
        let dnorm = sqrt(dot(&d, &d));
        let mut capped = false;
        if dnorm > radius {
            let scale = radius / dnorm;
            d.iter_mut().for_each(|di| *di *= scale);
            slope *= scale;
            capped = true;
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            let f_try = fg(&x_new, &mut g_new);
            evaluations += 1;
            if f_try.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_try <= f + 1e-4 * t * slope {
                accepted = true;
                let decrease = f - f_try;
                let mut s = vec![0.0; n];
                let mut y = vec![0.0; n];
                for i in 0..n {
                    s[i] = x_new[i] - x[i];
                    y[i] = g_new[i] - g[i];
                }
                let sy = dot(&s, &y);
                if sy > 1e-12 * sqrt(dot(&s, &s) * dot(&y, &y)) {
                    if hist.len() == opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                core::mem::swap(&mut x, &mut x_new);
                core::mem::swap(&mut g, &mut g_new);
                f = f_try;
                if capped && t == 1.0 {
                    radius = (2.0 * radius).min(opts.max_radius);
                }
                iterations += 1;
                if decrease <= opts.f_rel_tol * f.abs().max(1.0) {
                    status = Status::FunctionTolerance;
                }
                break;
            }
            t *= 0.5;
        }
        if status == Status::FunctionTolerance {
            break;
        }
        if !accepted {
            hist.clear();
            radius *= 0.5;
            if radius < opts.min_radius {
                status = Status::LineSearchFailed;
                break;
            }
            iterations += 1;
        }
    }
    if iterations >= opts.max_iter && status == Status::MaxIterations && sup_norm(&g) <= opts.grad_tol {
        status = Status::GradientTolerance;
    }
    Minimum {
        x,
        f,
        grad: g,
        iterations,
        evaluations,
        status,
        radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn minimizes_rosenbrock() {
        let opts = LbfgsOptions {
            max_iter: 500,
            grad_tol: 1e-9,
            f_rel_tol: 0.0,
            ..Default::default()
        };
        let m = lbfgs(rosenbrock, &[-1.2, 1.0], &opts);
        assert_eq!(m.status, Status::GradientTolerance);
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn quadratic_with_scaling() {
        let diag = [1.0, 1e3, 1e-2, 5.0];
        let fg = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..4 {
                g[i] = diag[i] * (x[i] - i as f64);
                f += 0.5 * diag[i] * (x[i] - i as f64).powi(2);
            }
            f
        };
        let opts = LbfgsOptions {
            grad_tol: 1e-10,
            f_rel_tol: 0.0,
            ..Default::default()
        };
        let m = lbfgs(fg, &[10.0; 4], &opts);
        for i in 0..4 {
            assert!((m.x[i] - i as f64).abs() < 1e-6, "{:?}", m);
        }
    }

    #[test]
    fn never_increases_and_handles_infinite_regions() {
        // finite only on x > 0
        let fg = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                g[0] = 0.0;
                return f64::INFINITY;
            }
            g[0] = 1.0 - 1.0 / x[0];
            x[0] - x[0].ln()
        };
        let m = lbfgs(fg, &[5.0], &LbfgsOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-5);
        let start = lbfgs(fg, &[-1.0], &LbfgsOptions::default());
        assert_eq!(start.status, Status::NonFiniteStart);
        assert_eq!(start.x, vec![-1.0]);
    }
}
