use alloc::vec::Vec;
use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Hopper, Plane, SimError, SimState, StepEvents, TerrainConfig};
use crate::ilqr::cost::{select_cost_mode, stage_cost};
use crate::linalg::{from_dyn, sqrt_psd, to_dyn};
use crate::{Action, State};

/// Anything that produces an action mean from the observed state and the
/// control step index.
pub trait Policy {
    fn mean_action(&self, x: &State, t: usize) -> Action;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn mean_action(&self, x: &State, t: usize) -> Action {
        (**self).mean_action(x, t)
    }
}

/// Applies no torque.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn mean_action(&self, _: &State, _: usize) -> Action {
        Action::zeros()
    }
}

/// Wraps a closure `(x, t) -> u`.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&State, usize) -> Action> Policy for FnPolicy<F> {
    fn mean_action(&self, x: &State, t: usize) -> Action {
        (self.0)(x, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Hip dropped below the fall height after `step` actions.
    Fall { step: usize },
    /// Knee or hip hit the ground during action `step - 1`.
    Collision { step: usize },
}

/// A recorded rollout. `states[t]` is observed before `actions[t]` is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// Number of steps requested; early termination records fewer.
    pub horizon: usize,
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub costs: Vec<f64>,
    pub events: Vec<StepEvents>,
    pub sim_states: Vec<SimState>,
    pub termination: Option<Termination>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn terminated_early(&self) -> bool {
        self.termination.is_some()
    }

    /// Keeps at most `n` steps and declares `n` the horizon.
    pub fn truncated(&self, n: usize) -> Trajectory {
        let k = n.min(self.steps());
        Trajectory {
            dt: self.dt,
            horizon: n,
            states: self.states[..=k].to_vec(),
            actions: self.actions[..k].to_vec(),
            costs: self.costs[..k].to_vec(),
            events: self.events[..k].to_vec(),
            sim_states: self.sim_states.iter().take(k + 1).copied().collect(),
            termination: if k < n { self.termination } else { None },
        }
    }

    pub fn mean_cost(&self) -> f64 {
        if self.costs.is_empty() {
            0.0
        } else {
            self.costs.iter().sum::<f64>() / self.costs.len() as f64
        }
    }

    /// Number of maximal runs of steps that end airborne (contact flag 0)
    /// and start after a step in contact.
    pub fn flight_phases(&self) -> usize {
        let mut count = 0;
        let mut was_contact = false;
        for x in &self.states {
            let c = x[crate::idx::CONTACT] > 0.5;
            if was_contact && !c {
                count += 1;
            }
            was_contact = c;
        }
        count
    }
}

/// A running simulation on possibly changing terrain, advanced one control
/// step at a time.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub hopper: &'a Hopper,
    pub state: SimState,
    pub plane: Plane,
    schedule: Vec<super::TerrainChange>,
    next_change: usize,
}

impl<'a> Episode<'a> {
    pub fn new(hopper: &'a Hopper, start: &State, terrain: &TerrainConfig) -> Result<Self, SimError> {
        let plane = terrain.initial_plane();
        let state = hopper.start_state(start, &plane)?;
        Ok(Episode { hopper, state, plane, schedule: terrain.schedule.clone(), next_change: 0 })
    }

    pub fn observe(&self) -> State {
        self.hopper.observe(&self.state, &self.plane)
    }

    pub fn hip_height(&self) -> f64 {
        self.hopper.hip_height(&self.state, &self.plane)
    }

    /// Replaces the ground if the robot does not penetrate the new plane.
    pub fn try_set_plane(&mut self, plane: Plane) -> bool {
        if super::Penetration::of(&self.hopper.params, &self.state.q, &plane).any() {
            return false;
        }
        self.plane = plane;
        if self.state.in_contact {
            // the foot is no longer on the ground it was touching
            self.state.in_contact = (plane.signed_distance(&super::foot_position(&self.hopper.params, &self.state.q)))
                .abs()
                < 1e-9;
            if !self.state.in_contact {
                self.state.contact_force = 0.0;
            }
        }
        true
    }

    fn apply_schedule(&mut self) {
        while let Some(change) = self.schedule.get(self.next_change).copied() {
            if change.at_time > self.state.time + 1e-9 {
                break;
            }
            let plane = Plane { height: change.floor_height, slope: change.floor_slope };
            if !self.try_set_plane(plane) {
                // deferred until the robot is clear of the new ground
                break;
            }
            self.next_change += 1;
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepEvents, SimError> {
        let (s, ev) = self.hopper.step(&self.state, action, &self.plane)?;
        self.state = s;
        self.apply_schedule();
        Ok(ev)
    }
}

/// Runs `policy` for `steps` control steps, sampling `u ~ N(mean, noise_cov)`
/// and clamping to the torque limit. Stops early on a fall or a body-ground
/// collision. Deterministic given `seed`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<P: Policy + ?Sized>(
    hopper: &Hopper,
    policy: &P,
    start: &State,
    terrain: &TerrainConfig,
    steps: usize,
    noise_cov: &Matrix2<f64>,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let noisy = noise_cov.iter().any(|&v| v != 0.0);
    let chol: Matrix2<f64> = if noisy { from_dyn(&sqrt_psd(&to_dyn(noise_cov))) } else { Matrix2::zeros() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ep = Episode::new(hopper, start, terrain)?;
    ep.apply_schedule();
    let mut traj = Trajectory {
        dt: hopper.dt,
        horizon: steps,
        states: Vec::with_capacity(steps + 1),
        actions: Vec::with_capacity(steps),
        costs: Vec::with_capacity(steps),
        events: Vec::with_capacity(steps),
        sim_states: Vec::with_capacity(steps + 1),
        termination: None,
    };
    traj.states.push(ep.observe());
    traj.sim_states.push(ep.state);

    for t in 0..steps {
        let x = *traj.states.last().unwrap();
        let mut u = policy.mean_action(&x, t);
        if noisy {
            let z = Action::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            u += chol * z;
        }
        if u.iter().any(|v| v.is_nan()) {
            return Err(SimError::Diverged { time: ep.state.time });
        }
        let u = hopper.clamp_action(&u);
        let ev = ep.step(&u)?;
        let x_next = ep.observe();
        traj.costs.push(stage_cost(&x, &u, select_cost_mode(&x)));
        traj.actions.push(u);
        traj.events.push(ev);
        traj.states.push(x_next);
        traj.sim_states.push(ep.state);
        if ev.collision {
            traj.termination = Some(Termination::Collision { step: t + 1 });
            break;
        }
        if ep.hip_height() < hopper.fall_height {
            traj.termination = Some(Termination::Fall { step: t + 1 });
            break;
        }
    }
    Ok(traj)
}
