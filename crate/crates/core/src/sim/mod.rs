//! Rail-constrained one-legged hopper with hard, inelastic foot contact.
//!
//! The base slides on a vertical rail; the thigh hangs from the base at the
//! hip joint and the shank from the thigh at the knee. The foot contact is a
//! frictionless unilateral constraint along the ground normal. Touchdown
//! applies an impulsive inelastic impact; lift-off happens when the constraint
//! force would turn negative. Each 10 ms control step is integrated with ten
//! fourth-order Runge-Kutta substeps.

mod model;
mod rollout;
mod terrain;

pub use model::{
    contact_jacobian, foot_position, forward_dynamics, hip_position, impact_map, kinetic_energy, knee_position,
    mass_matrix, potential_energy, Acceleration, Coords, RobotParams,
};
pub use rollout::{rollout, Episode, FnPolicy, Policy, Termination, Trajectory, ZeroPolicy};
pub use terrain::{Penetration, Plane, TerrainChange, TerrainConfig};

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::Vector3;

use crate::{idx, Action, State};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("simulation diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("degenerate contact: effective inverse mass {effective_inverse_mass}")]
    DegenerateImpact { effective_inverse_mass: f64 },
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("invalid robot parameters")]
    InvalidParams,
    #[error("start configuration penetrates the ground")]
    InvalidStart,
}

/// Full simulation state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimState {
    pub q: Coords,
    pub qdot: Coords,
    pub in_contact: bool,
    /// Normal contact force (N); zero in flight.
    pub contact_force: f64,
    pub time: f64,
}

/// What happened during one control step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub impact: bool,
    pub liftoff: bool,
    /// Vertical base velocity crossed from `>= 0` to `< 0` while airborne.
    pub apex: bool,
    /// Knee or hip went below the ground.
    pub collision: bool,
}

impl StepEvents {
    pub fn label(&self) -> &'static str {
        if self.collision {
            "collision"
        } else if self.impact {
            "impact"
        } else if self.liftoff {
            "liftoff"
        } else if self.apex {
            "apex"
        } else {
            ""
        }
    }
}

/// Simulator settings: robot constants plus integration and sensing choices.
#[derive(Clone, Debug, PartialEq)]
pub struct Hopper {
    pub params: RobotParams,
    /// Control period (s).
    pub dt: f64,
    /// Runge-Kutta substeps per control period.
    pub substeps: usize,
    /// Contact flag threshold on the normal force (N).
    pub force_cutoff: f64,
    /// Hip height below which a rollout counts as a fall (m).
    pub fall_height: f64,
}

impl Default for Hopper {
    fn default() -> Self {
        Hopper { params: RobotParams::default(), dt: 0.01, substeps: 10, force_cutoff: 0.1, fall_height: 0.1 }
    }
}

impl Hopper {
    pub fn tau_max(&self) -> f64 {
        self.params.tau_max
    }

    pub fn clamp_action(&self, u: &Action) -> Action {
        let m = self.params.tau_max;
        u.map(|v| v.clamp(-m, m))
    }

    /// Places the robot described by an observed state above `plane`; the
    /// contact flag of `x` is ignored and the robot starts airborne.
    pub fn start_state(&self, x: &State, plane: &Plane) -> Result<SimState, SimError> {
        let q = Vector3::new(x[idx::H] + plane.height, x[idx::PHI_H], x[idx::PHI_K]);
        let qdot = Vector3::new(x[idx::HDOT], x[idx::PHIDOT_H], x[idx::PHIDOT_K]);
        if Penetration::of(&self.params, &q, plane).any() || x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidStart);
        }
        Ok(SimState { q, qdot, in_contact: false, contact_force: 0.0, time: 0.0 })
    }

    /// Observed 7-dim state; `h` is measured from the ground under the hip.
    pub fn observe(&self, s: &SimState, plane: &Plane) -> State {
        let c = if s.contact_force > self.force_cutoff { 1.0 } else { 0.0 };
        crate::state(s.q[0] - plane.height_at(0.0), s.qdot[0], s.q[1], s.qdot[1], s.q[2], s.qdot[2], c)
    }

    /// Hip height above the ground plane under the hip.
    pub fn hip_height(&self, s: &SimState, plane: &Plane) -> f64 {
        s.q[0] - plane.height_at(0.0)
    }

    /// Advances one control period with the torque held constant.
    pub fn step(&self, state: &SimState, action: &Action, plane: &Plane) -> Result<(SimState, StepEvents), SimError> {
        let p = &self.params;
        let tau = self.clamp_action(action);
        let h = self.dt / self.substeps as f64;
        let mut s = *state;
        let mut ev = StepEvents::default();
        let hdot_start = s.qdot[0];

        for _ in 0..self.substeps {
            if s.in_contact {
                let a = forward_dynamics(p, &s.q, &s.qdot, &tau, Some(plane))?;
                if a.contact_force < 0.0 {
                    s.in_contact = false;
                    ev.liftoff = true;
                }
            }
            let contact = if s.in_contact { Some(plane) } else { None };
            let (q, qdot) = self.integrate(&s.q, &s.qdot, &tau, contact, h)?;
            s.q = q;
            s.qdot = qdot;

            let gap = plane.signed_distance(&foot_position(p, &s.q));
            if s.in_contact {
                s.q[0] -= gap / plane.slope.cos();
                s.qdot = impact_map(p, &s.q, &s.qdot, plane)?;
            } else if gap < 0.0 {
                s.q[0] -= gap / plane.slope.cos();
                let vn = (contact_jacobian(p, &s.q, plane) * s.qdot)[0];
                if vn < 0.0 {
                    s.qdot = impact_map(p, &s.q, &s.qdot, plane)?;
                    s.in_contact = true;
                    ev.impact = true;
                }
            }
            if Penetration::of(p, &s.q, plane).body() {
                ev.collision = true;
            }
            s.time += h;
            if !(s.q.iter().chain(s.qdot.iter()).all(|v| v.is_finite())) {
                return Err(SimError::Diverged { time: s.time });
            }
        }

        s.contact_force = if s.in_contact {
            forward_dynamics(p, &s.q, &s.qdot, &tau, Some(plane))?.contact_force.max(0.0)
        } else {
            0.0
        };
        ev.apex = !s.in_contact && hdot_start >= 0.0 && s.qdot[0] < 0.0;
        Ok((s, ev))
    }

    /// One classical Runge-Kutta substep of the (possibly constrained) dynamics.
    fn integrate(
        &self,
        q: &Coords,
        qd: &Coords,
        tau: &Action,
        contact: Option<&Plane>,
        h: f64,
    ) -> Result<(Coords, Coords), SimError> {
        let p = &self.params;
        let acc = |q: &Coords, qd: &Coords| forward_dynamics(p, q, qd, tau, contact).map(|a| a.qdd);
        let k1v = acc(q, qd)?;
        let k1q = *qd;
        let k2q = qd + k1v * (0.5 * h);
        let k2v = acc(&(q + k1q * (0.5 * h)), &k2q)?;
        let k3q = qd + k2v * (0.5 * h);
        let k3v = acc(&(q + k2q * (0.5 * h)), &k3q)?;
        let k4q = qd + k3v * h;
        let k4v = acc(&(q + k3q * h), &k4q)?;
        let q_next = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        let qd_next = qd + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        Ok((q_next, qd_next))
    }
}
