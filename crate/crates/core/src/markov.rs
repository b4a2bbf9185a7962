//! Two-state hidden Markov chain over latent strategies with covariate-dependent
//! transitions, log-space forward–backward, and an exhaustive enumeration oracle.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exp, log_add_exp, log_sigmoid, sigmoid, softplus};

/// Logistic transition coefficients out of one origin state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCoef {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl TransitionCoef {
    pub fn zeros(p: usize) -> Self {
        Self {
            intercept: 0.0,
            slopes: vec![0.0; p],
        }
    }

    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(g, x)| g * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    /// `Pr(U_1 = 1)`.
    pub init_prob_engaged: f64,
    /// Coefficients of `logit Pr(U_{j+1} = 1 | U_j = l)`, indexed by origin `l`.
    pub trans_coef: [TransitionCoef; 2],
}

impl HmmParams {
    pub fn new(init_prob_engaged: f64, from_lapsed: TransitionCoef, from_engaged: TransitionCoef) -> Self {
        Self {
            init_prob_engaged,
            trans_coef: [from_lapsed, from_engaged],
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.trans_coef[0].slopes.len()
    }

    pub fn log_initial(&self) -> [f64; 2] {
        let p = self.init_prob_engaged;
        [crate::math::ln_1p(-p), crate::math::ln(p)]
    }
}

/// Row-stochastic transition matrix, `C[l][m] = Pr(U_{j+1} = m | U_j = l)`.
pub fn transition_matrix(h: &HmmParams, x: &[f64]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for (l, row) in c.iter_mut().enumerate() {
        let p1 = sigmoid(h.trans_coef[l].linear_predictor(x));
        *row = [1.0 - p1, p1];
    }
    c
}

/// Elementwise log of [`transition_matrix`], computed without cancellation.
pub fn log_transition_matrix(h: &HmmParams, x: &[f64]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for (l, row) in c.iter_mut().enumerate() {
        let eta = h.trans_coef[l].linear_predictor(x);
        *row = [log_sigmoid(-eta), log_sigmoid(eta)];
    }
    c
}

/// Posterior marginals `ζ[j][l]`, pairwise posteriors `ξ[j][l][m]` for trials
/// `(j, j+1)`, and the log marginal likelihood of the emission sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeights {
    pub zeta: Vec<[f64; 2]>,
    pub xi: Vec<[[f64; 2]; 2]>,
    pub log_marginal: f64,
}

impl PosteriorWeights {
    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    /// Hard state decoding at 0.5, ties to state 1.
    pub fn decode(&self) -> Vec<u8> {
        self.zeta.iter().map(|z| u8::from(z[1] >= 0.5)).collect()
    }
}

/// Log-space forward–backward recursions.
///
/// `log_emissions[j][l]` is the log emission density of trial `j` in state `l`.
/// A trial with `-inf` in both states is a degenerate-likelihood error
/// (subject/task fields are zero; callers relabel them).
pub fn forward_backward(log_emissions: &[[f64; 2]], h: &HmmParams, x: &[f64]) -> Result<PosteriorWeights> {
    let n = log_emissions.len();
    if n == 0 {
        return Err(Error::Dimension("forward_backward needs at least one trial".into()));
    }
    for (j, e) in log_emissions.iter().enumerate() {
        if e[0] == f64::NEG_INFINITY && e[1] == f64::NEG_INFINITY || e.iter().any(|v| v.is_nan()) {
            return Err(Error::DegenerateLikelihood {
                subject: 0,
                task: 0,
                trial: j,
            });
        }
    }
    let log_c = log_transition_matrix(h, x);
    let log_pi = h.log_initial();

    let mut fwd = vec![[0.0f64; 2]; n];
    fwd[0] = [log_pi[0] + log_emissions[0][0], log_pi[1] + log_emissions[0][1]];
    for j in 1..n {
        for l in 0..2 {
            let into = log_add_exp(fwd[j - 1][0] + log_c[0][l], fwd[j - 1][1] + log_c[1][l]);
            fwd[j][l] = log_emissions[j][l] + into;
        }
    }
    let mut bwd = vec![[0.0f64; 2]; n];
    for j in (0..n - 1).rev() {
        for l in 0..2 {
            bwd[j][l] = log_add_exp(
                log_c[l][0] + log_emissions[j + 1][0] + bwd[j + 1][0],
                log_c[l][1] + log_emissions[j + 1][1] + bwd[j + 1][1],
            );
        }
    }
    let log_marginal = log_add_exp(fwd[n - 1][0], fwd[n - 1][1]);
    if !log_marginal.is_finite() {
        let trial = fwd
            .iter()
            .position(|f| f[0] == f64::NEG_INFINITY && f[1] == f64::NEG_INFINITY)
            .unwrap_or(0);
        return Err(Error::DegenerateLikelihood {
            subject: 0,
            task: 0,
            trial,
        });
    }

    let zeta = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| {
            let z1 = exp(f[1] + b[1] - log_marginal);
            let z0 = exp(f[0] + b[0] - log_marginal);
            let s = z0 + z1;
            [z0 / s, z1 / s]
        })
        .collect();
    let mut xi = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n.saturating_sub(1) {
        let mut m = [[0.0; 2]; 2];
        let mut s = 0.0;
        for (l, row) in m.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = exp(fwd[j][l] + log_c[l][k] + log_emissions[j + 1][k] + bwd[j + 1][k] - log_marginal);
                s += *cell;
            }
        }
        for row in m.iter_mut() {
            for cell in row.iter_mut() {
                *cell /= s;
            }
        }
        xi.push(m);
    }
    Ok(PosteriorWeights { zeta, xi, log_marginal })
}

/// Maximum sequence length accepted by [`brute_force_posterior`].
pub const BRUTE_FORCE_MAX_TRIALS: usize = 16;

/// Exact posteriors by summing over all `2^J` state paths.
pub fn brute_force_posterior(log_emissions: &[[f64; 2]], h: &HmmParams, x: &[f64]) -> Result<PosteriorWeights> {
    let n = log_emissions.len();
    if n > BRUTE_FORCE_MAX_TRIALS {
        return Err(Error::TooManyTrials(n));
    }
    if n == 0 {
        return Err(Error::Dimension("brute_force_posterior needs at least one trial".into()));
    }
    let log_c = log_transition_matrix(h, x);
    let log_pi = h.log_initial();
    let n_paths = 1usize << n;
    let mut log_w = vec![0.0f64; n_paths];
    for (path, w) in log_w.iter_mut().enumerate() {
        let state = |j: usize| (path >> j) & 1;
        let mut lw = log_pi[state(0)] + log_emissions[0][state(0)];
        for j in 1..n {
            lw += log_c[state(j - 1)][state(j)] + log_emissions[j][state(j)];
        }
        *w = lw;
    }
    let log_marginal = crate::math::log_sum_exp(&log_w);
    if !log_marginal.is_finite() {
        return Err(Error::DegenerateLikelihood {
            subject: 0,
            task: 0,
            trial: 0,
        });
    }
    let mut zeta = vec![[0.0f64; 2]; n];
    let mut xi = vec![[[0.0f64; 2]; 2]; n - 1];
    for (path, &lw) in log_w.iter().enumerate() {
        let p = exp(lw - log_marginal);
        for (j, z) in zeta.iter_mut().enumerate() {
            z[(path >> j) & 1] += p;
        }
        for (j, m) in xi.iter_mut().enumerate() {
            m[(path >> j) & 1][(path >> (j + 1)) & 1] += p;
        }
    }
    Ok(PosteriorWeights { zeta, xi, log_marginal })
}

/// Bound on each logistic coefficient; keeps separated (all-zero) weights finite.
pub const TRANSITION_COEF_BOUND: f64 = 25.0;

const RIDGE: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_STEPS: usize = 100;
const DECREMENT_TOL: f64 = 1e-13;

/// ξ-weighted logistic regression for the transitions out of one origin state.
///
/// Minimizes `Σ_i [-y_i η_i + n_i log(1 + e^{η_i})] + ridge/2 |γ|²` with
/// `η_i = γ_0 + γ_1ᵀ x_i`, where per subject `y_i = Σ_j ξ_{j,l,1}` and
/// `n_i = Σ_j (ξ_{j,l,0} + ξ_{j,l,1})`. Projected Newton–Raphson inside the box
/// `|γ| ≤ TRANSITION_COEF_BOUND`.
pub fn fit_transition_logistic(
    successes: &[f64],
    totals: &[f64],
    covariates: &[Vec<f64>],
    start: &TransitionCoef,
) -> Result<TransitionCoef> {
    let n_subj = successes.len();
    if totals.len() != n_subj || covariates.len() != n_subj {
        return Err(Error::Dimension("logistic update inputs differ in length".into()));
    }
    let p = start.slopes.len();
    let dim = p + 1;
    let design = |i: usize, k: usize| if k == 0 { 1.0 } else { covariates[i][k - 1] };
    let mut beta: Vec<f64> = core::iter::once(start.intercept)
        .chain(start.slopes.iter().copied())
        .collect();
    for b in beta.iter_mut() {
        *b = b.clamp(-TRANSITION_COEF_BOUND, TRANSITION_COEF_BOUND);
    }

    let objective = |beta: &[f64]| -> f64 {
        let mut f = 0.5 * RIDGE * beta.iter().map(|b| b * b).sum::<f64>();
        for i in 0..n_subj {
            let eta: f64 = (0..dim).map(|k| beta[k] * design(i, k)).sum();
            f += -successes[i] * eta + totals[i] * softplus(eta);
        }
        f
    };

    // Gradient entries are sums over all weights, so round-off grows with their total.
    let tol = NEWTON_TOL * totals.iter().sum::<f64>().max(1.0);
    let mut grad = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    let mut last_norm = f64::INFINITY;
    for _ in 0..NEWTON_MAX_STEPS {
        grad.iter_mut().zip(&beta).for_each(|(g, b)| *g = RIDGE * b);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for k in 0..dim {
            hess[k * dim + k] = RIDGE;
        }
        for i in 0..n_subj {
            let eta: f64 = (0..dim).map(|k| beta[k] * design(i, k)).sum();
            let s = sigmoid(eta);
            let r = totals[i] * s - successes[i];
            let wgt = totals[i] * s * (1.0 - s);
            for a in 0..dim {
                grad[a] += r * design(i, a);
                for b in 0..dim {
                    hess[a * dim + b] += wgt * design(i, a) * design(i, b);
                }
            }
        }
        // Coordinates pinned at the box with the gradient pushing outward are free of the KKT test.
        let pinned: Vec<bool> = (0..dim)
            .map(|k| (beta[k] >= TRANSITION_COEF_BOUND && grad[k] < 0.0) || (beta[k] <= -TRANSITION_COEF_BOUND && grad[k] > 0.0))
            .collect();
        last_norm = (0..dim).filter(|&k| !pinned[k]).map(|k| grad[k].abs()).fold(0.0, f64::max);
        if last_norm < tol {
            return Ok(TransitionCoef {
                intercept: beta[0],
                slopes: beta[1..].to_vec(),
            });
        }
        // Newton direction on the free coordinates.
        let free: Vec<usize> = (0..dim).filter(|&k| !pinned[k]).collect();
        let m = free.len();
        let mut sub = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (a, &ka) in free.iter().enumerate() {
            rhs[a] = -grad[ka];
            for (b, &kb) in free.iter().enumerate() {
                sub[a * m + b] = hess[ka * dim + kb];
            }
        }
        let step = crate::linalg::solve_spd(&mut sub, &rhs, m).unwrap_or(rhs);
        let f0 = objective(&beta);
        // The predicted decrease is below what the objective can resolve: stationary in floating point.
        let decrement: f64 = free.iter().zip(&step).map(|(&k, d)| -grad[k] * d).sum();
        if decrement <= DECREMENT_TOL * f0.abs().max(1.0) {
            return Ok(TransitionCoef {
                intercept: beta[0],
                slopes: beta[1..].to_vec(),
            });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = beta.clone();
            for (a, &k) in free.iter().enumerate() {
                trial[k] = (beta[k] + t * step[a]).clamp(-TRANSITION_COEF_BOUND, TRANSITION_COEF_BOUND);
            }
            if objective(&trial) <= f0 {
                beta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: NEWTON_MAX_STEPS,
        gradient_norm: last_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;

    fn hmm(pi: f64, g0: (f64, f64), g1: (f64, f64)) -> HmmParams {
        HmmParams::new(
            pi,
            TransitionCoef {
                intercept: g0.0,
                slopes: vec![g0.1],
            },
            TransitionCoef {
                intercept: g1.0,
                slopes: vec![g1.1],
            },
        )
    }

    #[test]
    fn transition_examples() {
        let h = hmm(0.95, (-0.3, -0.3), (1.3, 1.3));
        let c1 = transition_matrix(&h, &[1.0]);
        assert!((c1[0][1] - 0.354_343_693_774_204).abs() < 1e-12);
        let c0 = transition_matrix(&h, &[0.0]);
        assert!((c0[1][1] - 0.785_834_983_042_190).abs() < 1e-12);
        for row in c1.iter().chain(c0.iter()) {
            assert_eq!(row[0] + row[1], 1.0);
        }
        let z = transition_matrix(&hmm(0.5, (0.0, 0.0), (0.0, 0.0)), &[3.0]);
        assert_eq!(z, [[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn single_trial_recovers_prior_under_flat_likelihood() {
        let h = hmm(0.8, (0.1, 0.0), (0.2, 0.0));
        let pw = forward_backward(&[[-1.5, -1.5]], &h, &[0.0]).unwrap();
        assert!((pw.zeta[0][1] - 0.8).abs() < 1e-15);
        assert!(pw.xi.is_empty());
        let bf = brute_force_posterior(&[[-1.5, -1.5]], &h, &[0.0]).unwrap();
        assert!((bf.zeta[0][1] - pw.zeta[0][1]).abs() < 1e-15);
    }

    #[test]
    fn flat_emissions_give_chain_marginals() {
        let h = hmm(0.7, (-0.6, 0.4), (1.2, -0.5));
        let x = [1.0];
        let c = transition_matrix(&h, &x);
        let pw = forward_backward(&[[0.0, 0.0]; 12], &h, &x).unwrap();
        let mut marg = [0.3, 0.7];
        for z in &pw.zeta {
            assert!((z[1] - marg[1]).abs() < 1e-12);
            marg = [marg[0] * c[0][0] + marg[1] * c[1][0], marg[0] * c[0][1] + marg[1] * c[1][1]];
        }
        assert!(pw.log_marginal.abs() < 1e-12);
    }

    #[test]
    fn absorbing_chain_puts_mass_on_all_ones() {
        let h = hmm(1.0 - 1e-300, (-40.0, 0.0), (40.0, 0.0));
        let em = [[-0.3, -1.0], [-2.0, -0.1], [0.0, -4.0], [-1.0, -1.0]];
        let bf = brute_force_posterior(&em, &h, &[0.0]).unwrap();
        for z in &bf.zeta {
            assert!(z[1] > 1.0 - 1e-12);
        }
    }

    #[test]
    fn degenerate_trial_is_reported() {
        let h = hmm(0.5, (0.0, 0.0), (0.0, 0.0));
        let em = [[-1.0, -1.0], [f64::NEG_INFINITY, f64::NEG_INFINITY], [-1.0, -1.0]];
        match forward_backward(&em, &h, &[0.0]) {
            Err(Error::DegenerateLikelihood { trial, .. }) => assert_eq!(trial, 1),
            other => panic!("{other:?}"),
        }
        // one-sided -inf is fine
        let ok = forward_backward(&[[-1.0, f64::NEG_INFINITY], [-2.0, -1.0]], &h, &[0.0]).unwrap();
        assert_eq!(ok.zeta[0][1], 0.0);
    }

    #[test]
    fn brute_force_refuses_long_sequences() {
        let h = hmm(0.5, (0.0, 0.0), (0.0, 0.0));
        assert!(matches!(
            brute_force_posterior(&[[0.0, 0.0]; 17], &h, &[0.0]),
            Err(Error::TooManyTrials(17))
        ));
    }

    #[test]
    fn long_sequences_with_tiny_emissions_are_stable() {
        let h = hmm(0.9, (-0.3, -0.3), (1.3, 1.3));
        let em: Vec<[f64; 2]> = (0..200).map(|j| [-700.0 + (j % 3) as f64, -700.0 - (j % 5) as f64]).collect();
        let pw = forward_backward(&em, &h, &[1.0]).unwrap();
        assert!(pw.log_marginal.is_finite());
        assert!(pw.zeta.iter().flatten().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(pw.xi.iter().flatten().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn decode_ties_go_to_state_one() {
        let pw = PosteriorWeights {
            zeta: vec![[0.5, 0.5], [0.6, 0.4], [0.2, 0.8]],
            xi: vec![],
            log_marginal: 0.0,
        };
        assert_eq!(pw.decode(), vec![1, 0, 1]);
    }

    #[test]
    fn logistic_intercept_only_matches_closed_form() {
        // x ≡ 0: the slope is only held by the ridge, the intercept is logit(q).
        let succ = [3.0, 1.5, 0.5, 2.0];
        let tot = [10.0, 4.0, 2.0, 6.0];
        let q = succ.iter().sum::<f64>() / tot.iter().sum::<f64>();
        let cov = vec![vec![0.0]; 4];
        let fit = fit_transition_logistic(&succ, &tot, &cov, &TransitionCoef::zeros(1)).unwrap();
        assert!((fit.intercept - logit(q)).abs() < 1e-8);
        assert!(fit.slopes[0].abs() < 1e-8);
    }

    #[test]
    fn logistic_separation_hits_the_bound() {
        let cov = vec![vec![0.0], vec![1.0]];
        let fit = fit_transition_logistic(&[0.0, 0.0], &[5.0, 7.0], &cov, &TransitionCoef::zeros(1)).unwrap();
        // the ridge term balances the vanishing fitted mass well inside the box
        assert!(fit.intercept < -15.0 && fit.intercept >= -TRANSITION_COEF_BOUND);
        assert!(sigmoid(fit.linear_predictor(&[0.0])) < 1e-6);
        assert!(sigmoid(fit.linear_predictor(&[1.0])) < 1e-6);
    }

    #[test]
    fn logistic_stops_at_a_floating_point_stationary_point() {
        // large weights leave residual gradients that no representable step can reduce
        let n = 400;
        let cov: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 2) as f64]).collect();
        let totals: Vec<f64> = (0..n).map(|i| 1e6 + i as f64).collect();
        let succ: Vec<f64> = totals
            .iter()
            .enumerate()
            .map(|(i, t)| t * if i % 2 == 0 { 0.3 } else { 0.8 })
            .collect();
        let start = TransitionCoef {
            intercept: logit(0.3),
            slopes: vec![logit(0.8) - logit(0.3)],
        };
        let fit = fit_transition_logistic(&succ, &totals, &cov, &start).unwrap();
        assert!((fit.intercept - start.intercept).abs() < 1e-9);
        assert!((fit.slopes[0] - start.slopes[0]).abs() < 1e-9);
    }
}
