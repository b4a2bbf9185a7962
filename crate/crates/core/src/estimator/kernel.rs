//! Quadrature-weighted emission sums for one subject in one task, with
//! gradients in the per-node link-scale shared components and in the task scalars.

use alloc::vec;
use alloc::vec::Vec;

use crate::factor::TaskLoadings;
use crate::quadrature::QuadratureRule;
use crate::tasks::{emission_grad, state_ddm, DriftTable, TaskModel, TaskSpec, TrialRecord, SHARED};
use crate::wiener;

pub(crate) struct TaskEval {
    /// `Σ_j Σ_l ζ_jl Σ_r w_r ℓ_jl(f_r)`.
    pub value: f64,
    /// Per node, derivative of `value` in the link-scale shared components.
    pub d_eta: Vec<[f64; SHARED]>,
    /// Derivative of `value` in the natural-scale task scalars.
    pub d_scalars: Vec<f64>,
    /// Factor values at the nodes, flattened `n_nodes × d_f`.
    pub nodes: Vec<f64>,
}

pub(crate) struct SubjectTask<'a> {
    pub trials: &'a [TrialRecord],
    pub zeta: &'a [[f64; 2]],
    pub task: &'a TaskSpec,
    pub scalars: &'a [f64],
    pub drifts: &'a DriftTable,
    pub loadings: &'a TaskLoadings,
    pub x: &'a [f64],
}

/// Shared components at each node `f_r = m + s ∘ z_r`.
fn node_shared(
    st: &SubjectTask<'_>,
    m: &[f64],
    s: &[f64],
    rule: &QuadratureRule,
) -> (Vec<f64>, Vec<[f64; SHARED]>, Vec<[f64; SHARED]>) {
    let d_f = rule.dim;
    let fixed = st.loadings.fixed_predictor(st.x);
    let n = rule.len();
    let mut nodes = vec![0.0; n * d_f];
    let mut shared = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    for r in 0..n {
        let f = &mut nodes[r * d_f..(r + 1) * d_f];
        for (c, z) in rule.node(r).iter().enumerate() {
            f[c] = m[c] + s[c] * z;
        }
        let mut eta = [0.0; SHARED];
        eta.copy_from_slice(&fixed[..SHARED]);
        for (row, &fv) in st.loadings.factor_load.iter().zip(f.iter()) {
            for (e, psi) in eta.iter_mut().zip(row) {
                *e += psi * fv;
            }
        }
        let mut sh = [0.0; SHARED];
        let mut jc = [0.0; SHARED];
        for c in 0..SHARED {
            let link = st.loadings.links.0[c];
            sh[c] = link.inverse(eta[c]);
            jc[c] = link.inverse_derivative(sh[c]);
        }
        shared.push(sh);
        jac.push(jc);
    }
    (nodes, shared, jac)
}

pub(crate) fn eval(st: &SubjectTask<'_>, m: &[f64], s: &[f64], rule: &QuadratureRule, floor: f64, want_grad: bool) -> TaskEval {
    let (nodes, shared, jac) = node_shared(st, m, s, rule);
    let n_nodes = rule.len();
    let n_scalars = st.scalars.len();
    let tau_idx = st.task.nondecision_index();
    let tau = st.scalars[tau_idx];
    let lapsed = st.task.lapsed_start();
    let mut out = TaskEval {
        value: 0.0,
        d_eta: if want_grad { vec![[0.0; SHARED]; n_nodes] } else { Vec::new() },
        d_scalars: vec![0.0; n_scalars],
        nodes,
    };
    for (j, trial) in st.trials.iter().enumerate() {
        for l in 0..2u8 {
            let z = st.zeta[j][l as usize];
            if z <= floor {
                continue;
            }
            let drift = st.drifts.drift[j][l as usize];
            if !want_grad {
                let mut acc = 0.0;
                for (r, sh) in shared.iter().enumerate() {
                    let ddm = state_ddm(sh, l, lapsed, drift, tau);
                    acc += rule.weights[r] * wiener::log_density(trial.rt, trial.action == 1, &ddm);
                }
                out.value += z * acc;
                continue;
            }
            let (mut acc_v, mut acc_drift, mut acc_tau) = (0.0, 0.0, 0.0);
            for r in 0..n_nodes {
                let eg = emission_grad(trial, &shared[r], l, lapsed, drift, tau);
                let w = rule.weights[r];
                acc_v += w * eg.value;
                acc_drift += w * eg.d_drift;
                acc_tau += w * eg.d_nondecision;
                let wz = w * z;
                let de = &mut out.d_eta[r];
                for c in 0..SHARED {
                    de[c] += wz * eg.d_shared[c] * jac[r][c];
                }
            }
            out.value += z * acc_v;
            let gd = z * acc_drift;
            if gd != 0.0 {
                for (ds, dd) in out.d_scalars.iter_mut().zip(st.drifts.grad(j, l as usize)) {
                    *ds += gd * dd;
                }
            }
            out.d_scalars[tau_idx] += z * acc_tau;
        }
    }
    out
}

/// Log emissions of both states at a single factor value.
pub(crate) fn log_emissions(st: &SubjectTask<'_>, f: &[f64]) -> Vec<[f64; 2]> {
    let eta = st.loadings.linear_predictor(st.x, f);
    let mut sh = [0.0; SHARED];
    for c in 0..SHARED {
        sh[c] = st.loadings.links.0[c].inverse(eta[c]);
    }
    let tau = st.scalars[st.task.nondecision_index()];
    let lapsed = st.task.lapsed_start();
    st.trials
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mut e = [0.0; 2];
            for (l, v) in e.iter_mut().enumerate() {
                let ddm = state_ddm(&sh, l as u8, lapsed, st.drifts.drift[j][l], tau);
                *v = wiener::log_density(t.rt, t.action == 1, &ddm);
            }
            e
        })
        .collect()
}

impl TaskEval {
    /// Derivatives of `value` in the variational mean and SD.
    pub fn factor_grads(&self, rule: &QuadratureRule, psi: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d_f = rule.dim;
        let mut gm = vec![0.0; d_f];
        let mut gs = vec![0.0; d_f];
        for (r, de) in self.d_eta.iter().enumerate() {
            let z = rule.node(r);
            for c in 0..d_f {
                let d: f64 = de.iter().zip(&psi[c]).map(|(a, b)| a * b).sum();
                gm[c] += d;
                gs[c] += d * z[c];
            }
        }
        (gm, gs)
    }
}
