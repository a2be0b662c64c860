//! KL trust region: the augmented cost and the search over its weight.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector, Matrix2, SMatrix};

use super::backward::{backward_pass, BackwardConfig, BackwardResult, LqStep};
use super::cost::QuadraticCostExpansion;
use super::{IlqrConfig, IlqrError, LinearGaussianPolicy};
use crate::{Action, Gain, State, ACTION_DIM, STATE_DIM, XU_DIM};

/// The old policy's rule at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyStep {
    pub k: Action,
    pub gain: Gain,
    pub x_hat: State,
    pub sigma: Matrix2<f64>,
}

impl PolicyStep {
    pub fn of(policy: &LinearGaussianPolicy, t: usize) -> Self {
        let i = t.min(policy.len() - 1);
        PolicyStep { k: policy.k[i], gain: policy.gains[i], x_hat: policy.x_hat[i], sigma: policy.sigma[i] }
    }

    pub fn mean(&self, x: &State) -> Action {
        self.k + self.gain * (x - self.x_hat)
    }
}

/// Expansion of `(1/eta) l(z) - log p_old(u | x)` in deviations `z = (dx, du)`
/// from `(x_nom, u_nom)`. The Gaussian term is exactly quadratic, so the
/// result is exact whenever `expansion` is.
pub fn augment_cost(
    expansion: &QuadraticCostExpansion,
    old: &PolicyStep,
    x_nom: &State,
    u_nom: &Action,
    eta: f64,
) -> Result<QuadraticCostExpansion, IlqrError> {
    if !(eta > 0.0) {
        return Err(IlqrError::InvalidEta(eta));
    }
    let chol = old.sigma.cholesky().ok_or(IlqrError::CovarianceNotSpd)?;
    let prec = chol.inverse();
    // residual u - mean_old(x) = r0 + G z
    let r0 = u_nom - old.mean(x_nom);
    let mut g = SMatrix::<f64, ACTION_DIM, XU_DIM>::zeros();
    g.fixed_view_mut::<ACTION_DIM, STATE_DIM>(0, 0).copy_from(&(-old.gain));
    g.fixed_view_mut::<ACTION_DIM, ACTION_DIM>(0, STATE_DIM).copy_from(&Matrix2::identity());
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let gauss_const = 0.5 * r0.dot(&(prec * r0)) + 0.5 * (ACTION_DIM as f64 * (2.0 * PI).ln() + log_det);
    let hess = expansion.hess / eta + g.transpose() * prec * g;
    Ok(QuadraticCostExpansion {
        grad: expansion.grad / eta + g.transpose() * (prec * r0),
        hess: (hess + hess.transpose()) * 0.5,
        constant: expansion.constant / eta + gauss_const,
        mode: expansion.mode,
    })
}

/// `KL(N(m0, s0) || N(m1, s1))` for two-dimensional Gaussians.
pub fn kl_gaussian(m0: &Action, s0: &Matrix2<f64>, m1: &Action, s1: &Matrix2<f64>) -> Result<f64, IlqrError> {
    let c0 = s0.cholesky().ok_or(IlqrError::CovarianceNotSpd)?;
    let c1 = s1.cholesky().ok_or(IlqrError::CovarianceNotSpd)?;
    let p1 = c1.inverse();
    let d = m1 - m0;
    let ld0 = 2.0 * c0.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ld1 = 2.0 * c1.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * ((p1 * s0).trace() + d.dot(&(p1 * d)) - ACTION_DIM as f64 + ld1 - ld0))
}

/// Per-step `KL(p_old || p_new)` of the action distributions at the given
/// states.
pub fn kl_step(old: &LinearGaussianPolicy, new: &LinearGaussianPolicy, states: &[State]) -> Result<Vec<f64>, IlqrError> {
    states
        .iter()
        .enumerate()
        .map(|(t, x)| kl_gaussian(&old.mean_at(x, t), &old.covariance_at(t), &new.mean_at(x, t), &new.covariance_at(t)))
        .collect()
}

/// Linearized problem along the nominal trajectory, before the trust-region
/// term is added.
#[derive(Clone, Debug)]
pub struct LocalProblem {
    pub f_xu: Vec<SMatrix<f64, STATE_DIM, XU_DIM>>,
    /// Mismatch `f_xu [x_hat; u_hat] + f_c - x_hat_next` of the model.
    pub offsets: Vec<State>,
    pub expansions: Vec<QuadraticCostExpansion>,
    pub x_nom: Vec<State>,
    pub u_nom: Vec<Action>,
    /// The cost mode changes between `t` and `t + 1`.
    pub resets: Vec<bool>,
}

impl LocalProblem {
    pub fn horizon(&self) -> usize {
        self.x_nom.len()
    }

    pub fn lq_steps(&self, old: &LinearGaussianPolicy, eta: f64) -> Result<Vec<LqStep>, IlqrError> {
        (0..self.horizon())
            .map(|t| {
                let aug = augment_cost(&self.expansions[t], &PolicyStep::of(old, t), &self.x_nom[t], &self.u_nom[t], eta)?;
                Ok(LqStep {
                    f: DMatrix::from_column_slice(STATE_DIM, XU_DIM, self.f_xu[t].as_slice()),
                    offset: DVector::from_column_slice(self.offsets[t].as_slice()),
                    grad: DVector::from_column_slice(aug.grad.as_slice()),
                    hess: DMatrix::from_column_slice(XU_DIM, XU_DIM, aug.hess.as_slice()),
                    u_nominal: DVector::from_column_slice(self.u_nom[t].as_slice()),
                    reset_next: self.resets[t],
                })
            })
            .collect()
    }

    /// Writes the solved steps into `base` over `[0, horizon)`.
    pub fn apply(&self, base: &LinearGaussianPolicy, result: &BackwardResult, sigma: f64) -> LinearGaussianPolicy {
        let mut p = base.clone();
        let need = self.horizon();
        if p.len() < need {
            let last = p.len() - 1;
            p.k.resize(need, p.k[last]);
            p.gains.resize(need, p.gains[last]);
            p.x_hat.resize(need, p.x_hat[last]);
            p.u_hat.resize(need, p.u_hat[last]);
            p.sigma.resize(need, p.sigma[last]);
        }
        for t in 0..need {
            let u = self.u_nom[t] + Action::from_column_slice(result.du[t].as_slice());
            p.k[t] = u;
            p.u_hat[t] = u;
            p.gains[t] = Gain::from_column_slice(result.gains[t].as_slice());
            p.x_hat[t] = self.x_nom[t];
            p.sigma[t] = Matrix2::identity() * sigma;
        }
        p
    }
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome {
    pub policy: LinearGaussianPolicy,
    pub eta: f64,
    pub kl: Vec<f64>,
    /// `(eta, mean KL)` of every candidate tried; `None` if its backward
    /// pass failed.
    pub probes: Vec<(f64, Option<f64>)>,
}

impl LineSearchOutcome {
    pub fn mean_kl(&self) -> f64 {
        mean(&self.kl)
    }

    pub fn total_kl(&self) -> f64 {
        self.kl.iter().sum()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn eta_grid(config: &IlqrConfig) -> Vec<f64> {
    let n = config.eta_steps.max(2);
    let (lo, hi) = (config.eta_min.ln(), config.eta_max.ln());
    (0..n)
        .map(|i| match i {
            0 => config.eta_min,
            _ if i == n - 1 => config.eta_max,
            _ => (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// Solves the trust-region problem for one candidate `eta`.
pub fn solve_for_eta(
    problem: &LocalProblem,
    old: &LinearGaussianPolicy,
    config: &IlqrConfig,
    eta: f64,
) -> Result<(LinearGaussianPolicy, Vec<f64>), IlqrError> {
    let steps = problem.lq_steps(old, eta)?;
    let bc = BackwardConfig {
        u_limit: config.torque_fraction * config.tau_max,
        box_solver: config.box_solver,
        offset_term: config.offset_term,
    };
    let result = backward_pass(&steps, &bc)?;
    let new = problem.apply(old, &result, config.policy_sigma);
    let kl = kl_step(old, &new, &problem.x_nom)?;
    Ok((new, kl))
}

/// Scans the log-spaced `eta` grid from small (aggressive) to large
/// (conservative) and returns the first policy whose mean per-step KL from
/// `old` is within `epsilon_kl`.
pub fn eta_linesearch(
    problem: &LocalProblem,
    old: &LinearGaussianPolicy,
    config: &IlqrConfig,
) -> Result<LineSearchOutcome, IlqrError> {
    let mut probes = Vec::new();
    for eta in eta_grid(config) {
        match solve_for_eta(problem, old, config, eta) {
            Ok((policy, kl)) => {
                let m = mean(&kl);
                probes.push((eta, Some(m)));
                if m <= config.epsilon_kl {
                    return Ok(LineSearchOutcome { policy, eta, kl, probes });
                }
            }
            Err(IlqrError::BackwardPassFailed { .. }) => probes.push((eta, None)),
            Err(e) => return Err(e),
        }
    }
    let best = probes.iter().filter_map(|(_, k)| *k).fold(f64::INFINITY, f64::min);
    Err(IlqrError::TrustRegionInfeasible { min_mean_kl: best })
}
