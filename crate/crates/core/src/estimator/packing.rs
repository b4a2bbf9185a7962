//! Unconstrained coordinates of one task's emission parameters:
//! intercepts, optional covariate effects, free loadings, transformed scalars.

use alloc::vec::Vec;

use crate::factor::TaskLoadings;
use crate::math::{exp, ln, logit, sigmoid};
use crate::tasks::{ScalarDomain, SHARED};

pub(crate) const SATURATION_LIMIT: f64 = 8.0;

#[derive(Debug, Clone)]
pub(crate) struct TaskLayout {
    pub n_covariates: usize,
    pub fit_covariates: bool,
    /// `(factor row, component)` of each free loading.
    pub psi_free: Vec<(usize, usize)>,
    pub domains: &'static [ScalarDomain],
    pub tau_upper: f64,
}

impl TaskLayout {
    pub fn new(
        loadings: &TaskLoadings,
        n_covariates: usize,
        fit_covariates: bool,
        domains: &'static [ScalarDomain],
        tau_upper: f64,
    ) -> Self {
        let mut psi_free = Vec::new();
        for row in 0..loadings.factor_load.len() {
            for (c, &shared) in loadings.shared_mask.iter().enumerate() {
                if shared {
                    psi_free.push((row, c));
                }
            }
        }
        Self {
            n_covariates,
            fit_covariates,
            psi_free,
            domains,
            tau_upper,
        }
    }

    fn gamma_len(&self) -> usize {
        if self.fit_covariates {
            self.n_covariates * SHARED
        } else {
            0
        }
    }

    pub fn psi_offset(&self) -> usize {
        SHARED + self.gamma_len()
    }

    pub fn scalar_offset(&self) -> usize {
        self.psi_offset() + self.psi_free.len()
    }

    pub fn len(&self) -> usize {
        self.scalar_offset() + self.domains.len()
    }

    fn to_unconstrained(&self, d: ScalarDomain, v: f64) -> f64 {
        match d {
            ScalarDomain::Positive => ln(v),
            ScalarDomain::Unit => logit(v),
            ScalarDomain::NonDecision => logit((v / self.tau_upper).clamp(1e-12, 1.0 - 1e-12)),
        }
    }

    fn natural_of(&self, d: ScalarDomain, u: f64) -> f64 {
        match d {
            ScalarDomain::Positive => exp(u),
            ScalarDomain::Unit => sigmoid(u),
            ScalarDomain::NonDecision => self.tau_upper * sigmoid(u),
        }
    }

    /// `d natural / d unconstrained` at natural value `v`.
    fn chain(&self, d: ScalarDomain, v: f64) -> f64 {
        match d {
            ScalarDomain::Positive => v,
            ScalarDomain::Unit => v * (1.0 - v),
            ScalarDomain::NonDecision => v * (1.0 - v / self.tau_upper),
        }
    }

    /// Pulls logit-scale scalars back inside `±SATURATION_LIMIT`, where their
    /// gradients have not vanished.
    pub fn desaturate(&self, u: &mut [f64]) {
        let at = self.scalar_offset();
        for (i, &d) in self.domains.iter().enumerate() {
            if d != ScalarDomain::Positive {
                u[at + i] = u[at + i].clamp(-SATURATION_LIMIT, SATURATION_LIMIT);
            }
        }
    }

    pub fn pack(&self, loadings: &TaskLoadings, scalars: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.len());
        u.extend_from_slice(&loadings.intercept[..SHARED]);
        if self.fit_covariates {
            for row in &loadings.covar_load {
                u.extend_from_slice(&row[..SHARED]);
            }
        }
        for &(row, c) in &self.psi_free {
            u.push(loadings.factor_load[row][c]);
        }
        for (&d, &v) in self.domains.iter().zip(scalars) {
            u.push(self.to_unconstrained(d, v));
        }
        u
    }

    pub fn unpack(&self, u: &[f64], loadings: &mut TaskLoadings, scalars: &mut [f64]) {
        loadings.intercept[..SHARED].copy_from_slice(&u[..SHARED]);
        let mut at = SHARED;
        if self.fit_covariates {
            for row in loadings.covar_load.iter_mut() {
                row[..SHARED].copy_from_slice(&u[at..at + SHARED]);
                at += SHARED;
            }
        }
        for &(row, c) in &self.psi_free {
            loadings.factor_load[row][c] = u[at];
            at += 1;
        }
        for (i, &d) in self.domains.iter().enumerate() {
            scalars[i] = self.natural_of(d, u[at + i]);
        }
    }

    /// Adds one subject's contribution to the unconstrained gradient.
    pub fn accumulate(&self, grad: &mut [f64], eval: &super::kernel::TaskEval, x: &[f64], scalars: &[f64], d_f: usize) {
        let mut d_mu = [0.0; SHARED];
        for de in &eval.d_eta {
            for c in 0..SHARED {
                d_mu[c] += de[c];
            }
        }
        for c in 0..SHARED {
            grad[c] += d_mu[c];
        }
        let mut at = SHARED;
        if self.fit_covariates {
            for &xv in x.iter().take(self.n_covariates) {
                for c in 0..SHARED {
                    grad[at + c] += xv * d_mu[c];
                }
                at += SHARED;
            }
        }
        for &(row, c) in &self.psi_free {
            let mut g = 0.0;
            for (r, de) in eval.d_eta.iter().enumerate() {
                g += de[c] * eval.nodes[r * d_f + row];
            }
            grad[at] += g;
            at += 1;
        }
        for (i, &d) in self.domains.iter().enumerate() {
            grad[at + i] += eval.d_scalars[i] * self.chain(d, scalars[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{Link, LinkSpec};
    use crate::tasks::{TaskModel, TaskSpec};
    use alloc::vec;

    #[test]
    fn pack_unpack_roundtrip() {
        let mut l = TaskLoadings::new(
            vec![-0.9, 0.4, 0.18],
            1,
            2,
            vec![true, false, true],
            LinkSpec(vec![Link::Log, Link::Log, Link::Logit]),
        );
        l.factor_load = vec![vec![0.1, 0.0, -0.1], vec![0.3, 0.0, 0.2]];
        l.covar_load = vec![vec![0.05, -0.02, 0.01]];
        let ft = TaskSpec::Flanker;
        let layout = TaskLayout::new(&l, 1, true, ft.scalar_domains(), 0.2);
        assert_eq!(layout.psi_free.len(), 4);
        assert_eq!(layout.len(), 3 + 3 + 4 + 4);
        let scalars = [3.0, 1.5, 0.1, 0.14];
        let u = layout.pack(&l, &scalars);
        let mut l2 = l.clone();
        l2.factor_load = vec![vec![0.0; 3]; 2];
        let mut s2 = [0.0; 4];
        layout.unpack(&u, &mut l2, &mut s2);
        assert_eq!(l2.intercept, l.intercept);
        assert_eq!(l2.covar_load, l.covar_load);
        assert_eq!(l2.factor_load, l.factor_load);
        for (a, b) in s2.iter().zip(&scalars) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
