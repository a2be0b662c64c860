#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Matrix2x3, Matrix3, RowVector3, Vector2, Vector3};

use super::terrain::Plane;
use super::SimError;
use crate::Action;

/// Physical constants of the simulated hopper.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotParams {
    pub m_hip: f64,
    pub m_upper: f64,
    pub m_shank: f64,
    /// Length of each of the two leg segments (hip-knee, knee-foot).
    pub segment_length: f64,
    pub tau_max: f64,
    /// Viscous joint damping; the joint torque is `-joint_damping * phidot`.
    pub joint_damping: f64,
    pub gravity: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            m_hip: 0.15,
            m_upper: 0.1,
            m_shank: 0.01,
            segment_length: 0.1,
            tau_max: 1.3,
            joint_damping: 0.05,
            gravity: 9.81,
        }
    }
}

impl RobotParams {
    pub fn total_mass(&self) -> f64 {
        self.m_hip + self.m_upper + self.m_shank
    }

    pub fn leg_length(&self) -> f64 {
        2.0 * self.segment_length
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.m_hip > 0.0
            && self.m_upper > 0.0
            && self.m_shank > 0.0
            && self.segment_length > 0.0
            && self.tau_max > 0.0
            && self.joint_damping >= 0.0
            && self.gravity.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams)
        }
    }

    fn upper_inertia(&self) -> f64 {
        self.m_upper * self.segment_length * self.segment_length / 12.0
    }

    fn shank_inertia(&self) -> f64 {
        self.m_shank * self.segment_length * self.segment_length / 12.0
    }
}

/// Generalized coordinates `(h, phi_h, phi_k)`: absolute base height, thigh
/// angle from the downward vertical, and knee flexion. The shank points along
/// `phi_h - phi_k`.
pub type Coords = Vector3<f64>;

#[derive(Clone, Copy)]
struct Angles {
    sa: f64,
    ca: f64,
    sb: f64,
    cb: f64,
}

impl Angles {
    fn new(q: &Coords) -> Self {
        let a = q[1];
        let b = q[1] - q[2];
        Angles { sa: a.sin(), ca: a.cos(), sb: b.sin(), cb: b.cos() }
    }
}

pub fn knee_position(p: &RobotParams, q: &Coords) -> Vector2<f64> {
    let s = Angles::new(q);
    let l = p.segment_length;
    Vector2::new(l * s.sa, q[0] - l * s.ca)
}

pub fn foot_position(p: &RobotParams, q: &Coords) -> Vector2<f64> {
    let s = Angles::new(q);
    let l = p.segment_length;
    Vector2::new(l * s.sa + l * s.sb, q[0] - l * s.ca - l * s.cb)
}

pub fn hip_position(q: &Coords) -> Vector2<f64> {
    Vector2::new(0.0, q[0])
}

/// Planar point Jacobians of the thigh COM, shank COM and foot.
struct Jacobians {
    thigh: Matrix2x3<f64>,
    shank: Matrix2x3<f64>,
    foot: Matrix2x3<f64>,
}

fn jacobians(p: &RobotParams, s: &Angles) -> Jacobians {
    let l = p.segment_length;
    let knee = Matrix2x3::new(0.0, l * s.ca, 0.0, 1.0, l * s.sa, 0.0);
    let dir_b = Matrix2x3::new(0.0, s.cb, -s.cb, 0.0, s.sb, -s.sb);
    Jacobians {
        thigh: Matrix2x3::new(0.0, 0.5 * l * s.ca, 0.0, 1.0, 0.5 * l * s.sa, 0.0),
        shank: knee + dir_b * (0.5 * l),
        foot: knee + dir_b * l,
    }
}

/// Velocity-product accelerations `Jdot * qdot` of the thigh COM, shank COM and foot.
fn drift(p: &RobotParams, s: &Angles, qd: &Coords) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
    let l = p.segment_length;
    let ad = qd[1];
    let bd = qd[1] - qd[2];
    let ua = Vector2::new(-s.sa, s.ca) * (ad * ad);
    let ub = Vector2::new(-s.sb, s.cb) * (bd * bd);
    (ua * (0.5 * l), ua * l + ub * (0.5 * l), ua * l + ub * l)
}

pub fn mass_matrix(p: &RobotParams, q: &Coords) -> Matrix3<f64> {
    let s = Angles::new(q);
    let j = jacobians(p, &s);
    let ea = RowVector3::new(0.0, 1.0, 0.0);
    let eb = RowVector3::new(0.0, 1.0, -1.0);
    let mut m = Matrix3::zeros();
    m[(0, 0)] += p.m_hip;
    m += j.thigh.transpose() * j.thigh * p.m_upper;
    m += j.shank.transpose() * j.shank * p.m_shank;
    m += ea.transpose() * ea * p.upper_inertia();
    m += eb.transpose() * eb * p.shank_inertia();
    m
}

/// Right-hand side of `M qdd = f (+ J^T lambda)`: joint torques, damping,
/// gravity and velocity-product terms.
fn generalized_force(p: &RobotParams, q: &Coords, qd: &Coords, tau: &Action) -> Vector3<f64> {
    let s = Angles::new(q);
    let j = jacobians(p, &s);
    let (d_thigh, d_shank, _) = drift(p, &s, qd);
    let g = p.gravity;
    let mut f = Vector3::new(0.0, tau[0] - p.joint_damping * qd[1], tau[1] - p.joint_damping * qd[2]);
    f[0] -= p.m_hip * g;
    f -= j.thigh.row(1).transpose() * (p.m_upper * g);
    f -= j.shank.row(1).transpose() * (p.m_shank * g);
    f -= j.thigh.transpose() * d_thigh * p.m_upper;
    f -= j.shank.transpose() * d_shank * p.m_shank;
    f
}

/// Contact Jacobian of the foot along the plane normal.
pub fn contact_jacobian(p: &RobotParams, q: &Coords, plane: &Plane) -> RowVector3<f64> {
    let s = Angles::new(q);
    plane.normal().transpose() * jacobians(p, &s).foot
}

fn contact_drift(p: &RobotParams, q: &Coords, qd: &Coords, plane: &Plane) -> f64 {
    let s = Angles::new(q);
    plane.normal().dot(&drift(p, &s, qd).2)
}

/// Generalized accelerations and the contact multiplier (normal force, N).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Acceleration {
    pub qdd: Vector3<f64>,
    pub contact_force: f64,
}

/// Solves the equations of motion. With `contact = Some(plane)` the foot is
/// held on the plane by a frictionless constraint whose multiplier is
/// returned; a negative multiplier means the foot wants to lift off.
pub fn forward_dynamics(
    p: &RobotParams,
    q: &Coords,
    qd: &Coords,
    tau: &Action,
    contact: Option<&Plane>,
) -> Result<Acceleration, SimError> {
    let m = mass_matrix(p, q);
    let chol = m.cholesky().ok_or(SimError::SingularMassMatrix)?;
    let rhs = generalized_force(p, q, qd, tau);
    let free = chol.solve(&rhs);
    let Some(plane) = contact else {
        return Ok(Acceleration { qdd: free, contact_force: 0.0 });
    };
    let jc = contact_jacobian(p, q, plane);
    let minv_jt = chol.solve(&jc.transpose());
    let a = (jc * minv_jt)[0];
    if a.abs() < 1e-12 {
        return Err(SimError::DegenerateImpact { effective_inverse_mass: a });
    }
    let lambda = -((jc * free)[0] + contact_drift(p, q, qd, plane)) / a;
    Ok(Acceleration { qdd: free + minv_jt * lambda, contact_force: lambda })
}

/// Inelastic impulsive impact: removes the normal foot velocity while
/// preserving generalized momentum in the constraint null space.
pub fn impact_map(p: &RobotParams, q: &Coords, qd_minus: &Coords, plane: &Plane) -> Result<Coords, SimError> {
    let m = mass_matrix(p, q);
    let chol = m.cholesky().ok_or(SimError::SingularMassMatrix)?;
    let jc = contact_jacobian(p, q, plane);
    let minv_jt = chol.solve(&jc.transpose());
    let a = (jc * minv_jt)[0];
    if a.abs() < 1e-12 {
        return Err(SimError::DegenerateImpact { effective_inverse_mass: a });
    }
    let vn = (jc * qd_minus)[0];
    Ok(qd_minus - minv_jt * (vn / a))
}

pub fn kinetic_energy(p: &RobotParams, q: &Coords, qd: &Coords) -> f64 {
    0.5 * (qd.transpose() * mass_matrix(p, q) * qd)[0]
}

pub fn potential_energy(p: &RobotParams, q: &Coords) -> f64 {
    let s = Angles::new(q);
    let l = p.segment_length;
    let y_thigh = q[0] - 0.5 * l * s.ca;
    let y_shank = q[0] - l * s.ca - 0.5 * l * s.cb;
    p.gravity * (p.m_hip * q[0] + p.m_upper * y_thigh + p.m_shank * y_shank)
}
