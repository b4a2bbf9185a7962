//! Gauss–Hermite rules for standard-normal expectations and their tensor products.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::TaskLoadings;
use crate::math::sqrt;
use crate::tasks::{emission_grad, TaskModel, TrialRecord, SHARED};

pub const MAX_NODES: usize = 50;
pub const DEFAULT_NODES: usize = 5;

/// Tensor-product rule with `Σ_r w_r h(z_r) ≈ E[h(Z)]`, `Z ~ N(0, I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub dim: usize,
    /// Flattened `n_points × dim`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn node(&self, r: usize) -> &[f64] {
        &self.nodes[r * self.dim..(r + 1) * self.dim]
    }

    /// `Σ_r w_r h(m + s ∘ z_r)`.
    pub fn expectation(&self, m: &[f64], s: &[f64], mut h: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut f = vec![0.0; self.dim];
        let mut acc = 0.0;
        for r in 0..self.len() {
            for (c, z) in self.node(r).iter().enumerate() {
                f[c] = m[c] + s[c] * z;
            }
            acc += self.weights[r] * h(&f);
        }
        acc
    }
}

/// Orthonormal probabilists' Hermite polynomials `p_0..p_{n-1}` at `x`,
/// returning `(p_{n}(x), p_{n}'(x), Σ_{k<n} p_k(x)²)`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (x * cur - sqrt(k as f64) * prev) / sqrt((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    (cur, sqrt(n as f64) * prev, sumsq)
}

/// One-dimensional `n`-point rule, exact for polynomials of degree ≤ `2n − 1`.
pub fn gauss_hermite_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Config(alloc::format!(
            "quadrature node count must be in 1..={MAX_NODES}, got {n}"
        )));
    }
    let off: Vec<f64> = (1..n).map(|k| sqrt(k as f64)).collect();
    let mut x = crate::linalg::symmetric_tridiagonal_eigenvalues(&vec![0.0; n], &off);
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = orthonormal_hermite(n, *xi);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            *xi -= step;
            if step.abs() < 1e-16 * (1.0 + xi.abs()) {
                break;
            }
        }
    }
    for i in 0..n / 2 {
        let a = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -a;
        x[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let mut w: Vec<f64> = x.iter().map(|&xi| 1.0 / orthonormal_hermite(n, xi).2).collect();
    for i in 0..n / 2 {
        let a = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = a;
        w[n - 1 - i] = a;
    }
    let total: f64 = w.iter().sum();
    for wi in w.iter_mut() {
        *wi /= total;
    }
    Ok((x, w))
}

/// Tensor product of `n`-point rules in `dim` dimensions. `dim = 0` yields the
/// single empty node with weight 1.
pub fn gauss_hermite(n: usize, dim: usize) -> Result<QuadratureRule> {
    let (x, w) = gauss_hermite_1d(n)?;
    let count = n.pow(dim as u32);
    let mut nodes = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for r in 0..count {
        let mut idx = r;
        let mut weight = 1.0;
        let start = nodes.len();
        nodes.resize(start + dim, 0.0);
        // last coordinate varies fastest
        for c in (0..dim).rev() {
            let i = idx % n;
            idx /= n;
            nodes[start + c] = x[i];
            weight *= w[i];
        }
        weights.push(weight);
    }
    Ok(QuadratureRule { dim, nodes, weights })
}

/// Gauss–Hermite estimate of `E_q[log p(trial | state, f)]` for
/// `f ~ N(m, diag(s²))`.
///
/// `drift` is the trial's drift in `state`; the shared components come from
/// the task's factor layer and τ from the task scalars.
#[allow(clippy::too_many_arguments)]
pub fn expected_emission(
    trial: &TrialRecord,
    state: u8,
    task: &dyn TaskModel,
    drift: f64,
    scalars: &[f64],
    loadings: &TaskLoadings,
    x: &[f64],
    m: &[f64],
    s: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "variational sd",
            value: s.iter().copied().find(|&v| !(v > 0.0)).unwrap_or(f64::NAN),
        });
    }
    if loadings.n_components() != SHARED || m.len() != rule.dim || s.len() != rule.dim {
        return Err(Error::Dimension(
            "expected_emission inputs disagree with the rule dimension".into(),
        ));
    }
    let tau = scalars[task.nondecision_index()];
    let lapsed = task.lapsed_start();
    Ok(rule.expectation(m, s, |f| {
        let eta = loadings.linear_predictor(x, f);
        let mut shared = [0.0; SHARED];
        for (c, (e, l)) in eta.iter().zip(&loadings.links.0).enumerate() {
            shared[c] = l.inverse(*e);
        }
        emission_grad(trial, &shared, state, lapsed, drift, tau).value
    }))
}
