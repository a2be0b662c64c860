use alloc::collections::VecDeque;
use alloc::vec::Vec;
use nalgebra::{Matrix2, SMatrix};

use super::cost::{quadratize_cost, CostMode, QuadraticCostExpansion, JUMP_HEIGHT};
use super::trust::{eta_linesearch, LocalProblem};
use super::{IlqrConfig, IlqrError, LinearGaussianPolicy};
use crate::dynamics::{fit_trajectory_dynamics, transitions, FitConfig, GmmPrior, LinearGaussianDynamics, TransitionSample};
use crate::eval::phvs;
use crate::sim::{rollout, Hopper, SimState, TerrainConfig, Trajectory};
use crate::{idx, Action, State, StateAction, STATE_DIM, XU_DIM};

/// A system the optimizer can roll policies out on.
pub trait Plant {
    /// Rolls `policy` out for up to `steps` steps with action noise
    /// `N(0, noise_var I)`.
    fn rollout(&self, policy: &LinearGaussianPolicy, steps: usize, noise_var: f64, seed: u64) -> Result<Trajectory, IlqrError>;

    /// Exact local linearization along a recorded noise-free trajectory.
    fn linearize(&self, traj: &Trajectory) -> Result<LinearGaussianDynamics, IlqrError>;
}

/// Stage costs with a state-dependent mode.
pub trait CostModel {
    fn mode(&self, x: &State) -> CostMode;
    fn expand(&self, mode: CostMode, x: &State, u: &Action) -> QuadraticCostExpansion;
}

/// The jump / land switching cost, optionally plus a one-sided quadratic
/// penalty `fall_weight * (fall_margin - h)^2` on the hip dropping below
/// `fall_margin`. The penalty is off when `fall_weight` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopperCost {
    /// Hip height below which the jump cost applies while airborne.
    pub jump_height: f64,
    /// Ground contact alone also selects the jump cost.
    pub contact_jump: bool,
    pub fall_margin: f64,
    pub fall_weight: f64,
}

impl HopperCost {
    pub fn fall_penalty(&self, x: &State) -> f64 {
        let d = self.fall_margin - x[idx::H];
        if self.fall_weight > 0.0 && d > 0.0 {
            self.fall_weight * d * d
        } else {
            0.0
        }
    }
}

impl Default for HopperCost {
    fn default() -> Self {
        HopperCost { jump_height: JUMP_HEIGHT, contact_jump: true, fall_margin: 0.0, fall_weight: 0.0 }
    }
}

impl CostModel for HopperCost {
    fn mode(&self, x: &State) -> CostMode {
        if (self.contact_jump && x[idx::CONTACT] > 0.5) || x[idx::H] < self.jump_height {
            CostMode::Jump
        } else {
            CostMode::Land
        }
    }

    fn expand(&self, mode: CostMode, x: &State, u: &Action) -> QuadraticCostExpansion {
        let mut e = quadratize_cost(mode, x, u);
        let d = self.fall_margin - x[idx::H];
        if self.fall_weight > 0.0 && d > 0.0 {
            e.constant += self.fall_weight * d * d;
            e.grad[idx::H] -= 2.0 * self.fall_weight * d;
            e.hess[(idx::H, idx::H)] += 2.0 * self.fall_weight;
        }
        e
    }
}

/// The simulated hopper from a fixed start state on fixed terrain.
#[derive(Clone, Debug)]
pub struct HopperPlant {
    pub hopper: Hopper,
    pub start: State,
    pub terrain: TerrainConfig,
}

impl HopperPlant {
    pub fn new(start: State) -> Self {
        HopperPlant { hopper: Hopper::default(), start, terrain: TerrainConfig::flat() }
    }
}

impl Plant for HopperPlant {
    fn rollout(&self, policy: &LinearGaussianPolicy, steps: usize, noise_var: f64, seed: u64) -> Result<Trajectory, IlqrError> {
        let cov = Matrix2::identity() * noise_var;
        Ok(rollout(&self.hopper, policy, &self.start, &self.terrain, steps, &cov, seed)?)
    }

    fn linearize(&self, traj: &Trajectory) -> Result<LinearGaussianDynamics, IlqrError> {
        finite_difference_dynamics(&self.hopper, &self.terrain, traj)
    }
}

fn perturbed(s: &SimState, i: usize, h: f64) -> SimState {
    let mut p = *s;
    match i {
        idx::H => p.q[0] += h,
        idx::HDOT => p.qdot[0] += h,
        idx::PHI_H => p.q[1] += h,
        idx::PHIDOT_H => p.qdot[1] += h,
        idx::PHI_K => p.q[2] += h,
        idx::PHIDOT_K => p.qdot[2] += h,
        _ => {}
    }
    p
}

/// Central-difference Jacobians of one simulator step around each recorded
/// `(sim state, action)`, with the offset chosen so the model reproduces the
/// recorded next state exactly. The contact flag is an output only.
pub fn finite_difference_dynamics(
    hopper: &Hopper,
    terrain: &TerrainConfig,
    traj: &Trajectory,
) -> Result<LinearGaussianDynamics, IlqrError> {
    let plane = terrain.initial_plane();
    let eps = 1e-6;
    let steps = traj.steps();
    let mut out = LinearGaussianDynamics {
        f_xu: Vec::with_capacity(steps),
        f_c: Vec::with_capacity(steps),
        cov: Vec::with_capacity(steps),
        sample_counts: Vec::with_capacity(steps),
        condition: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let s = traj.sim_states[t];
        let u = traj.actions[t];
        let next = |s: &SimState, u: &Action| -> Result<State, IlqrError> {
            let (n, _) = hopper.step(s, u, &plane)?;
            Ok(hopper.observe(&n, &plane))
        };
        let mut f = SMatrix::<f64, STATE_DIM, XU_DIM>::zeros();
        for i in 0..STATE_DIM {
            if i == idx::CONTACT {
                continue;
            }
            let col = (next(&perturbed(&s, i, eps), &u)? - next(&perturbed(&s, i, -eps), &u)?) / (2.0 * eps);
            f.set_column(i, &col);
        }
        for j in 0..2 {
            let mut up = u;
            let mut um = u;
            up[j] += eps;
            um[j] -= eps;
            let col = (next(&s, &up)? - next(&s, &um)?) / (2.0 * eps);
            f.set_column(STATE_DIM + j, &col);
        }
        let x = traj.states[t];
        let xu = StateAction::from_fn(|i, _| if i < STATE_DIM { x[i] } else { u[i - STATE_DIM] });
        out.f_c.push(traj.states[t + 1] - f * xu);
        out.f_xu.push(f);
        out.cov.push(SMatrix::identity() * 1e-6);
        out.sample_counts.push(1);
        out.condition.push(1.0);
    }
    Ok(out)
}

/// Grows the horizon by one increment if the rollout ran to completion and
/// the hip stayed high over its final steps.
pub fn extend_horizon(current: usize, latest: &Trajectory, config: &IlqrConfig) -> usize {
    if latest.terminated_early() || latest.steps() < current {
        return current;
    }
    let n = latest.states.len();
    let window = &latest.states[n.saturating_sub(config.stability_window)..];
    let min_h = window.iter().map(|x| x[idx::H]).fold(f64::INFINITY, f64::min);
    if min_h > config.stability_height {
        (current + config.horizon_step).min(config.max_horizon)
    } else {
        current
    }
}

/// SplitMix64-style mixing of a base seed with two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where the local dynamics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicsSource {
    /// Fitted from noisy rollouts.
    Learned,
    /// Finite-difference linearization of the plant.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iter: usize,
    /// Horizon the iteration optimized for.
    pub horizon: usize,
    /// Steps actually optimized (the rollouts may end earlier).
    pub optimized_steps: usize,
    pub eta: f64,
    pub mean_kl: f64,
    pub total_kl: f64,
    /// Mean stage cost of the new policy's noise-free rollout.
    pub mean_cost: f64,
    pub phvs: f64,
    pub fell: bool,
    pub accepted: bool,
    pub error: Option<IlqrError>,
}

/// Outer iLQR loop state: the current policy, the sample history and the
/// mixture prior carried between iterations.
#[derive(Clone, Debug)]
pub struct IlqrOptimizer<P: Plant, C: CostModel> {
    pub plant: P,
    pub cost: C,
    pub config: IlqrConfig,
    pub fit: FitConfig,
    pub source: DynamicsSource,
    pub policy: LinearGaussianPolicy,
    pub reports: Vec<IterationReport>,
    pub seed: u64,
    /// Local dynamics used by the latest successful iteration.
    pub last_dynamics: Option<LinearGaussianDynamics>,
    history: VecDeque<Vec<TransitionSample>>,
    prior: Option<GmmPrior>,
    iteration: usize,
    failures: usize,
}

impl<P: Plant, C: CostModel> IlqrOptimizer<P, C> {
    pub fn new(
        plant: P,
        cost: C,
        config: IlqrConfig,
        fit: FitConfig,
        source: DynamicsSource,
        policy: LinearGaussianPolicy,
        seed: u64,
    ) -> Self {
        IlqrOptimizer {
            plant,
            cost,
            config,
            fit,
            source,
            policy,
            reports: Vec::new(),
            seed,
            last_dynamics: None,
            history: VecDeque::new(),
            prior: None,
            iteration: 0,
            failures: 0,
        }
    }

    pub(crate) fn local_problem(&self, nominal: &Trajectory, dynamics: &LinearGaussianDynamics, steps: usize) -> LocalProblem {
        let x_nom: Vec<State> = nominal.states[..steps].to_vec();
        let u_nom: Vec<Action> = nominal.actions[..steps].to_vec();
        let offsets = (0..steps)
            .map(|t| dynamics.mean_next(t, &x_nom[t], &u_nom[t]) - nominal.states[t + 1])
            .collect();
        let modes: Vec<CostMode> = x_nom.iter().map(|x| self.cost.mode(x)).collect();
        let expansions = (0..steps).map(|t| self.cost.expand(modes[t], &x_nom[t], &u_nom[t])).collect();
        let resets = (0..steps).map(|t| self.config.value_reset && t + 1 < steps && modes[t + 1] != modes[t]).collect();
        LocalProblem { f_xu: dynamics.f_xu[..steps].to_vec(), offsets, expansions, x_nom, u_nom, resets }
    }

    fn try_iterate(&mut self) -> Result<IterationReport, IlqrError> {
        let horizon = self.policy.horizon;
        let it = self.iteration as u64;
        let nominal = self.plant.rollout(&self.policy, horizon, 0.0, derive_seed(self.seed, it, 0))?;
        let (dynamics, steps) = match self.source {
            DynamicsSource::GroundTruth => {
                let steps = nominal.steps();
                (self.plant.linearize(&nominal)?, steps)
            }
            DynamicsSource::Learned => {
                let samples = (0..self.config.rollouts)
                    .map(|j| {
                        self.plant.rollout(&self.policy, horizon, self.config.policy_sigma, derive_seed(self.seed, it, j as u64 + 1))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let longest = samples.iter().map(|s| s.steps()).max().unwrap_or(0);
                let steps = horizon.min(nominal.steps()).min(longest);
                if steps == 0 {
                    return Err(IlqrError::EmptyHorizon);
                }
                let cut: Vec<Trajectory> = samples.iter().map(|s| s.truncated(steps)).collect();
                let history: Vec<TransitionSample> = self.history.iter().flatten().copied().collect();
                let fit = fit_trajectory_dynamics(&cut, &self.fit, &history, derive_seed(self.seed, it, 1000), self.prior.as_ref())?;
                self.prior = Some(fit.prior);
                self.history.push_back(cut.iter().flat_map(transitions).collect());
                while self.history.len() > self.fit.history_window {
                    self.history.pop_front();
                }
                (fit.dynamics, steps)
            }
        };
        if steps == 0 {
            return Err(IlqrError::EmptyHorizon);
        }
        let problem = self.local_problem(&nominal, &dynamics, steps);
        let anchor = self.policy.recentered(&problem.x_nom, self.config.torque_fraction * self.config.tau_max);
        let outcome = eta_linesearch(&problem, &anchor, &self.config)?;
        let mut policy = outcome.policy.clone();
        let check = self.plant.rollout(&policy, horizon, 0.0, derive_seed(self.seed, it, 0))?;
        policy.horizon = extend_horizon(horizon, &check, &self.config);
        self.policy = policy;
        self.last_dynamics = Some(dynamics);
        Ok(IterationReport {
            iter: self.iteration,
            horizon,
            optimized_steps: steps,
            eta: outcome.eta,
            mean_kl: outcome.mean_kl(),
            total_kl: outcome.total_kl(),
            mean_cost: check.mean_cost(),
            phvs: phvs(&check),
            fell: check.terminated_early(),
            accepted: true,
            error: None,
        })
    }

    /// One outer iteration. A failed iteration keeps the previous policy and
    /// is reported; too many failures in a row abort.
    pub fn iterate(&mut self) -> Result<&IterationReport, IlqrError> {
        let report = match self.try_iterate() {
            Ok(r) => {
                self.failures = 0;
                r
            }
            Err(e) => {
                self.failures += 1;
                log::warn!("iLQR iteration {} failed: {e}", self.iteration);
                if self.failures >= self.config.max_consecutive_failures {
                    return Err(IlqrError::Aborted { failures: self.failures, last: alloc::boxed::Box::new(e) });
                }
                IterationReport {
                    iter: self.iteration,
                    horizon: self.policy.horizon,
                    optimized_steps: 0,
                    eta: f64::NAN,
                    mean_kl: f64::NAN,
                    total_kl: f64::NAN,
                    mean_cost: f64::NAN,
                    phvs: f64::NAN,
                    fell: true,
                    accepted: false,
                    error: Some(e),
                }
            }
        };
        self.iteration += 1;
        self.reports.push(report);
        Ok(self.reports.last().expect("just pushed"))
    }

    pub fn run(&mut self, iterations: usize) -> Result<(), IlqrError> {
        for _ in 0..iterations {
            self.iterate()?;
        }
        Ok(())
    }
}

