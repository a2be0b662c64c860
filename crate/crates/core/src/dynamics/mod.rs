//! Time-varying affine-Gaussian dynamics fitted along a trajectory
//! distribution.
//!
//! All transitions of the current rollouts (and a short history of earlier
//! ones) train a Gaussian mixture over `(x, u, x_next)`. At every step the
//! mixture acts as a weak prior on the empirical moments, and the posterior is
//! conditioned on `(x, u)` with a ridge term that pulls the fitted transition
//! towards "state stays where it is".

mod fit;
mod gmm;

pub use fit::{
    empirical_moments, fit_timestep, identity_shift, posterior_moments, shift_moments, Moments, TimestepFit,
    MAX_CONDITION,
};
pub use gmm::{fit_gmm, GmmConfig, GmmFit, GmmPrior, JointCov};

use alloc::vec::Vec;
use nalgebra::SMatrix;

use crate::sim::Trajectory;
use crate::{State, StateAction, Transition, STATE_DIM, XU_DIM};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("too few samples: {samples} < {needed}")]
    TooFewSamples { samples: usize, needed: usize },
    #[error("non-finite moments")]
    NonFiniteMoments,
    #[error("ridge lambda must be non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("ill-conditioned fit (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("ill-conditioned fit at step {step} (condition number {condition:e})")]
    IllConditionedAt { step: usize, condition: f64 },
    #[error("no rollout survives to step {step}")]
    InsufficientData { step: usize },
    #[error("trajectory horizons differ ({expected} vs {found})")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no trajectories")]
    NoTrajectories,
}

/// One observed transition `x_t, u_t -> x_{t+1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSample {
    pub t: usize,
    pub xu: StateAction,
    pub x_next: State,
}

impl TransitionSample {
    pub fn x(&self) -> State {
        self.xu.fixed_rows::<STATE_DIM>(0).into_owned()
    }

    pub fn x_delta(&self) -> State {
        self.x_next - self.x()
    }

    pub fn joint(&self) -> Transition {
        Transition::from_fn(|i, _| if i < XU_DIM { self.xu[i] } else { self.x_next[i - XU_DIM] })
    }
}

/// Transitions recorded in a trajectory, up to its termination.
pub fn transitions(traj: &Trajectory) -> Vec<TransitionSample> {
    (0..traj.steps())
        .map(|t| {
            let (x, u) = (traj.states[t], traj.actions[t]);
            TransitionSample {
                t,
                xu: StateAction::from_fn(|i, _| if i < STATE_DIM { x[i] } else { u[i - STATE_DIM] }),
                x_next: traj.states[t + 1],
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub ridge_lambda: f64,
    pub gmm_k: usize,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    pub prior_pseudo_count: f64,
    pub covariance_floor: f64,
    /// Earlier iterations whose samples also train the mixture.
    pub history_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ridge_lambda: 1e-2,
            gmm_k: 5,
            gmm_max_iters: 30,
            gmm_tol: 1e-4,
            prior_pseudo_count: 1.0,
            covariance_floor: 1e-6,
            history_window: 3,
        }
    }
}

/// `x_{t+1} ~ N(f_xu[t] [x_t; u_t] + f_c[t], cov[t])` for `t < horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianDynamics {
    pub f_xu: Vec<SMatrix<f64, STATE_DIM, XU_DIM>>,
    pub f_c: Vec<State>,
    pub cov: Vec<SMatrix<f64, STATE_DIM, STATE_DIM>>,
    /// Empirical transitions behind each step.
    pub sample_counts: Vec<usize>,
    pub condition: Vec<f64>,
}

impl LinearGaussianDynamics {
    pub fn horizon(&self) -> usize {
        self.f_xu.len()
    }

    pub fn mean_next(&self, t: usize, x: &State, u: &crate::Action) -> State {
        let xu = StateAction::from_fn(|i, _| if i < STATE_DIM { x[i] } else { u[i - STATE_DIM] });
        self.f_xu[t] * xu + self.f_c[t]
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsFit {
    pub dynamics: LinearGaussianDynamics,
    pub prior: GmmPrior,
    pub gmm_log_likelihood: Vec<f64>,
    pub gmm_reinitialized: usize,
}

/// Per-step outcome of a fit, kept even when the step fails.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub results: Vec<Result<f64, FitError>>,
}

fn check_shapes(trajectories: &[Trajectory]) -> Result<usize, FitError> {
    let first = trajectories.first().ok_or(FitError::NoTrajectories)?;
    for tr in trajectories {
        if tr.horizon != first.horizon {
            return Err(FitError::ShapeMismatch { expected: first.horizon, found: tr.horizon });
        }
    }
    Ok(first.horizon)
}

fn pooled(trajectories: &[Trajectory], history: &[TransitionSample]) -> Vec<Transition> {
    trajectories.iter().flat_map(transitions).chain(history.iter().copied()).map(|s| s.joint()).collect()
}

fn step_samples(trajectories: &[Trajectory], t: usize) -> Vec<Transition> {
    trajectories
        .iter()
        .filter(|tr| tr.steps() > t)
        .map(|tr| {
            let (x, u, xn) = (tr.states[t], tr.actions[t], tr.states[t + 1]);
            Transition::from_fn(|i, _| match i {
                i if i < STATE_DIM => x[i],
                i if i < XU_DIM => u[i - STATE_DIM],
                i => xn[i - XU_DIM],
            })
        })
        .collect()
}

fn fit_prior(
    trajectories: &[Trajectory],
    config: &FitConfig,
    history: &[TransitionSample],
    seed: u64,
    warm_start: Option<&GmmPrior>,
) -> Result<GmmFit, FitError> {
    let gmm_config = GmmConfig {
        k: config.gmm_k,
        max_iters: config.gmm_max_iters,
        tol: config.gmm_tol,
        covariance_floor: config.covariance_floor,
        seed,
    };
    let mut gmm = fit_gmm(&pooled(trajectories, history), &gmm_config, warm_start)?;
    gmm.prior.pseudo_count = config.prior_pseudo_count;
    Ok(gmm)
}

/// Fits one affine-Gaussian transition per step of the common horizon.
/// Steps beyond every rollout's termination fail with
/// [`FitError::InsufficientData`].
pub fn fit_trajectory_dynamics(
    trajectories: &[Trajectory],
    config: &FitConfig,
    history: &[TransitionSample],
    seed: u64,
    warm_start: Option<&GmmPrior>,
) -> Result<DynamicsFit, FitError> {
    let horizon = check_shapes(trajectories)?;
    let gmm = fit_prior(trajectories, config, history, seed, warm_start)?;
    let mut dynamics = LinearGaussianDynamics {
        f_xu: Vec::with_capacity(horizon),
        f_c: Vec::with_capacity(horizon),
        cov: Vec::with_capacity(horizon),
        sample_counts: Vec::with_capacity(horizon),
        condition: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let samples = step_samples(trajectories, t);
        if samples.is_empty() {
            return Err(FitError::InsufficientData { step: t });
        }
        let m = posterior_moments(&samples, &gmm.prior);
        let fit = fit_timestep(&m.mean, &m.cov, config.ridge_lambda, config.covariance_floor).map_err(|e| match e {
            FitError::IllConditioned { condition } => FitError::IllConditionedAt { step: t, condition },
            e => e,
        })?;
        dynamics.f_xu.push(fit.f_xu);
        dynamics.f_c.push(fit.f_c);
        dynamics.cov.push(fit.cov);
        dynamics.sample_counts.push(samples.len());
        dynamics.condition.push(fit.condition);
    }
    Ok(DynamicsFit { dynamics, prior: gmm.prior, gmm_log_likelihood: gmm.log_likelihood, gmm_reinitialized: gmm.reinitialized })
}

/// Runs every per-step fit and reports each outcome instead of stopping at
/// the first failure: `Ok(condition number)` or the step's error.
pub fn fit_diagnostics(
    trajectories: &[Trajectory],
    config: &FitConfig,
    history: &[TransitionSample],
    seed: u64,
) -> Result<StepDiagnostics, FitError> {
    let horizon = check_shapes(trajectories)?;
    let gmm = fit_prior(trajectories, config, history, seed, None)?;
    let results = (0..horizon)
        .map(|t| {
            let samples = step_samples(trajectories, t);
            if samples.is_empty() {
                return Err(FitError::InsufficientData { step: t });
            }
            let m = posterior_moments(&samples, &gmm.prior);
            fit_timestep(&m.mean, &m.cov, config.ridge_lambda, config.covariance_floor).map(|f| f.condition)
        })
        .collect();
    Ok(StepDiagnostics { results })
}
