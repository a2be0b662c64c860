//! Control-limited iLQR under a KL trust region.
//!
//! Each outer iteration rolls out the current time-varying policy, fits (or
//! computes) local linear dynamics along it, and replaces the policy by the
//! minimizer of the quadratized switching cost plus a penalty on drifting
//! away from the previous action distribution. The penalty weight is found
//! by a log-spaced line search so that the mean per-step KL divergence stays
//! within a fixed budget. The horizon grows while rollouts stay upright.

mod backward;
pub mod cost;
mod iterate;
mod policy;
mod trust;

#[cfg(test)]
mod tests;

pub use backward::{backward_pass, box_qp, BackwardConfig, BackwardResult, BoxQpSolution, BoxSolver, LqStep};
pub use cost::{quadratize_cost, select_cost_mode, stage_cost, CostMode, QuadraticCostExpansion};
pub use iterate::{
    derive_seed, extend_horizon, finite_difference_dynamics, CostModel, DynamicsSource, HopperCost, HopperPlant,
    IlqrOptimizer, IterationReport, Plant,
};
pub use policy::LinearGaussianPolicy;
pub use trust::{
    augment_cost, eta_grid, eta_linesearch, kl_gaussian, kl_step, solve_for_eta, LineSearchOutcome, LocalProblem,
    PolicyStep,
};

use alloc::boxed::Box;

use crate::dynamics::FitError;
use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IlqrError {
    #[error("eta must be positive, got {0}")]
    InvalidEta(f64),
    #[error("policy covariance is not symmetric positive definite")]
    CovarianceNotSpd,
    #[error("box subproblem is not strictly convex")]
    BoxQpNotConvex,
    #[error("Q_uu not positive definite at step {step} after regularization")]
    BackwardPassFailed { step: usize },
    #[error("empty optimization horizon")]
    EmptyHorizon,
    #[error("no eta satisfies the KL bound (smallest mean KL {min_mean_kl})")]
    TrustRegionInfeasible { min_mean_kl: f64 },
    #[error("dynamics fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("aborted after {failures} consecutive failed iterations; last: {last}")]
    Aborted { failures: usize, last: Box<IlqrError> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IlqrConfig {
    pub epsilon_kl: f64,
    /// Variance of the (isotropic) policy covariance.
    pub policy_sigma: f64,
    /// Feedforward bound as a fraction of the torque limit.
    pub torque_fraction: f64,
    pub tau_max: f64,
    /// Horizon growth per stable iteration, in steps.
    pub horizon_step: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_steps: usize,
    /// Minimum hip height over the stability window for the horizon to grow.
    pub stability_height: f64,
    /// Steps at the end of a rollout checked for stability.
    pub stability_window: usize,
    pub initial_horizon: usize,
    pub max_horizon: usize,
    pub rollouts: usize,
    /// Initial feedforward torques are uniform in `±init_fraction * tau_max`.
    pub init_fraction: f64,
    pub box_solver: BoxSolver,
    pub offset_term: bool,
    /// Zero the value derivatives where the cost mode switches.
    pub value_reset: bool,
    pub max_consecutive_failures: usize,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        IlqrConfig {
            epsilon_kl: 0.5,
            policy_sigma: 0.01,
            torque_fraction: 0.9,
            tau_max: 1.3,
            horizon_step: 5,
            eta_min: 1e-3,
            eta_max: 1e3,
            eta_steps: 21,
            stability_height: 0.12,
            stability_window: 10,
            initial_horizon: 30,
            max_horizon: 100,
            rollouts: 5,
            init_fraction: 0.1,
            box_solver: BoxSolver::ProjectedNewton,
            offset_term: true,
            value_reset: false,
            max_consecutive_failures: 3,
        }
    }
}
