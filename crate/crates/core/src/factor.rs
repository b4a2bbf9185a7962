//! Generalized latent-factor layer: componentwise links, the map from
//! covariates and subject factors to subject–task parameters, and post-hoc
//! canonicalization of the factor rotation, location and scale.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, ln, logit, sigmoid, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Logit,
    Identity,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Identity => "identity",
        }
    }

    /// Natural scale to link scale.
    pub fn forward(self, value: f64, component: usize) -> Result<f64> {
        let ok = match self {
            Link::Log => value > 0.0,
            Link::Logit => value > 0.0 && value < 1.0,
            Link::Identity => value.is_finite(),
        };
        if !ok || value.is_nan() {
            return Err(Error::LinkDomain {
                component,
                link: self.name(),
                value,
            });
        }
        Ok(match self {
            Link::Log => ln(value),
            Link::Logit => logit(value),
            Link::Identity => value,
        })
    }

    /// Link scale to natural scale.
    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => exp(eta),
            Link::Logit => sigmoid(eta),
            Link::Identity => eta,
        }
    }

    /// `d inverse(eta) / d eta`, given `value = inverse(eta)`.
    #[inline]
    pub fn inverse_derivative(self, value: f64) -> f64 {
        match self {
            Link::Log => value,
            Link::Logit => value * (1.0 - value),
            Link::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkSpec(pub Vec<Link>);

impl LinkSpec {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn link_transform(values: &[f64], spec: &LinkSpec, direction: Direction) -> Result<Vec<f64>> {
    if values.len() != spec.len() {
        return Err(Error::Dimension(alloc::format!(
            "{} values for {} links",
            values.len(),
            spec.len()
        )));
    }
    values
        .iter()
        .zip(&spec.0)
        .enumerate()
        .map(|(c, (&v, link))| match direction {
            Direction::Forward => link.forward(v, c),
            Direction::Inverse => Ok(link.inverse(v)),
        })
        .collect()
}

/// Factor-layer parameters of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLoadings {
    /// Link-scale intercept, one entry per component.
    pub intercept: Vec<f64>,
    /// Covariate effects, `p` rows by `d` components.
    pub covar_load: Vec<Vec<f64>>,
    /// Factor loadings, `d_f` rows by `d` components. Columns with a false mask entry stay zero.
    pub factor_load: Vec<Vec<f64>>,
    pub shared_mask: Vec<bool>,
    pub links: LinkSpec,
}

impl TaskLoadings {
    pub fn new(intercept: Vec<f64>, p: usize, n_factors: usize, shared_mask: Vec<bool>, links: LinkSpec) -> Self {
        let d = intercept.len();
        Self {
            intercept,
            covar_load: vec![vec![0.0; d]; p],
            factor_load: vec![vec![0.0; d]; n_factors],
            shared_mask,
            links,
        }
    }

    pub fn n_components(&self) -> usize {
        self.intercept.len()
    }

    /// `μ + Γᵀx`.
    pub fn fixed_predictor(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = self.intercept.clone();
        for (row, &xv) in self.covar_load.iter().zip(x) {
            for (e, g) in eta.iter_mut().zip(row) {
                *e += g * xv;
            }
        }
        eta
    }

    /// `μ + Γᵀx + Ψᵀf`.
    pub fn linear_predictor(&self, x: &[f64], f: &[f64]) -> Vec<f64> {
        let mut eta = self.fixed_predictor(x);
        for (row, &fv) in self.factor_load.iter().zip(f) {
            for (e, psi) in eta.iter_mut().zip(row) {
                *e += psi * fv;
            }
        }
        eta
    }

    /// Zeroes loadings on task-specific (unshared) components.
    pub fn enforce_structural_zeros(&mut self) {
        for row in &mut self.factor_load {
            for (psi, &shared) in row.iter_mut().zip(&self.shared_mask) {
                if !shared {
                    *psi = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub n_factors: usize,
    pub tasks: Vec<TaskLoadings>,
}

impl FactorModel {
    pub fn validate(&self) -> Result<()> {
        for (k, t) in self.tasks.iter().enumerate() {
            let d = t.n_components();
            if t.links.len() != d || t.shared_mask.len() != d {
                return Err(Error::Dimension(alloc::format!(
                    "task {k}: links/mask length differs from {d} components"
                )));
            }
            if t.factor_load.len() != self.n_factors || t.factor_load.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(alloc::format!(
                    "task {k}: loading matrix is not {}x{d}",
                    self.n_factors
                )));
            }
            if t.covar_load.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(alloc::format!(
                    "task {k}: covariate effects have wrong width"
                )));
            }
            let all = t
                .intercept
                .iter()
                .chain(t.covar_load.iter().flatten())
                .chain(t.factor_load.iter().flatten());
            if all.clone().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "factor layer",
                    value: all.copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Natural-scale parameters `g⁻¹(μ + Γᵀx + Ψᵀf)` of one task.
    pub fn subject_params(&self, task: usize, x: &[f64], f: &[f64]) -> Vec<f64> {
        let t = &self.tasks[task];
        t.linear_predictor(x, f)
            .into_iter()
            .zip(&t.links.0)
            .map(|(e, l)| l.inverse(e))
            .collect()
    }
}

/// Canonical representative of the factor model's rotation/translation/scale class.
///
/// Centers the factors into the intercepts, rotates so that the leading
/// `d_f × d_f` block of the stacked shared loading columns is upper triangular
/// with a positive diagonal, then rescales each factor to unit sample SD.
/// Every subject's linear predictor is unchanged.
pub fn canonicalize(fm: &FactorModel, factors: &[Vec<f64>]) -> Result<(FactorModel, Vec<Vec<f64>>)> {
    let d_f = fm.n_factors;
    let n = factors.len();
    let mut out = fm.clone();
    let mut f: Vec<Vec<f64>> = factors.to_vec();
    if d_f == 0 {
        return Ok((out, f));
    }
    if n <= d_f {
        return Err(Error::Dimension(alloc::format!(
            "canonicalization needs more than {d_f} subjects, got {n}"
        )));
    }
    if f.iter().any(|fi| fi.len() != d_f) {
        return Err(Error::Dimension("factor vectors have wrong length".into()));
    }

    // center
    let mean: Vec<f64> = (0..d_f).map(|c| f.iter().map(|fi| fi[c]).sum::<f64>() / n as f64).collect();
    for t in &mut out.tasks {
        for (c, &m) in mean.iter().enumerate() {
            for (mu, psi) in t.intercept.iter_mut().zip(&t.factor_load[c]) {
                *mu += psi * m;
            }
        }
    }
    for fi in &mut f {
        for (v, m) in fi.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    // rotate
    let shared_cols: Vec<(usize, usize)> = out
        .tasks
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.shared_mask.iter().enumerate().filter(|(_, &s)| s).map(move |(c, _)| (k, c)))
        .take(d_f)
        .collect();
    if shared_cols.len() < d_f {
        return Err(Error::RankDeficient { dim: d_f });
    }
    let mut block = vec![0.0; d_f * d_f];
    for r in 0..d_f {
        for (j, &(k, c)) in shared_cols.iter().enumerate() {
            block[r * d_f + j] = out.tasks[k].factor_load[r][c];
        }
    }
    let scale = block.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (q, r) = crate::linalg::qr_square(&block, d_f);
    if scale == 0.0 || (0..d_f).any(|i| r[i * d_f + i] <= 1e-10 * scale) {
        return Err(Error::RankDeficient { dim: d_f });
    }
    // Ψ ← Qᵀ Ψ, f ← Qᵀ f
    let qt_apply = |v: &[f64]| -> Vec<f64> { (0..d_f).map(|a| (0..d_f).map(|b| q[b * d_f + a] * v[b]).sum()).collect() };
    for t in &mut out.tasks {
        let d = t.n_components();
        for c in 0..d {
            let col: Vec<f64> = (0..d_f).map(|row| t.factor_load[row][c]).collect();
            let rot = qt_apply(&col);
            for (row, v) in rot.into_iter().enumerate() {
                t.factor_load[row][c] = v;
            }
        }
        t.enforce_structural_zeros();
    }
    for fi in &mut f {
        *fi = qt_apply(fi);
    }

    // rescale
    for c in 0..d_f {
        let ss: f64 = f.iter().map(|fi| fi[c] * fi[c]).sum();
        let sd = sqrt(ss / (n - 1) as f64);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::RankDeficient { dim: d_f });
        }
        for fi in &mut f {
            fi[c] /= sd;
        }
        for t in &mut out.tasks {
            for psi in &mut t.factor_load[c] {
                *psi *= sd;
            }
        }
    }
    Ok((out, f))
}
