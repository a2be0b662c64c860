use nalgebra::{SMatrix, SVector};

pub const STATE_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;
pub const XU_DIM: usize = STATE_DIM + ACTION_DIM;
/// Dimension of a transition tuple `(x, u, x_next)`.
pub const TRANSITION_DIM: usize = XU_DIM + STATE_DIM;

/// Observed state `(h, hdot, phi_h, phidot_h, phi_k, phidot_k, c)`.
pub type State = SVector<f64, STATE_DIM>;
/// Joint torques `(u_h, u_k)` in N·m.
pub type Action = SVector<f64, ACTION_DIM>;
pub type StateAction = SVector<f64, XU_DIM>;
pub type Transition = SVector<f64, TRANSITION_DIM>;
/// Time-varying feedback gain, maps a state error to a torque.
pub type Gain = SMatrix<f64, ACTION_DIM, STATE_DIM>;

/// Indices into [`State`].
pub mod idx {
    pub const H: usize = 0;
    pub const HDOT: usize = 1;
    pub const PHI_H: usize = 2;
    pub const PHIDOT_H: usize = 3;
    pub const PHI_K: usize = 4;
    pub const PHIDOT_K: usize = 5;
    pub const CONTACT: usize = 6;
}

/// Builds a [`State`] from its seven components.
pub fn state(h: f64, hdot: f64, phi_h: f64, phidot_h: f64, phi_k: f64, phidot_k: f64, c: f64) -> State {
    State::from_column_slice(&[h, hdot, phi_h, phidot_h, phi_k, phidot_k, c])
}

/// First start configuration used for policy optimization.
pub fn x0_first() -> State {
    state(0.2, 0.0, 1.3, 0.0, 2.3, 0.0, 0.0)
}

/// Second start configuration used for policy optimization.
pub fn x0_second() -> State {
    state(0.3, 0.0, 1.0, 0.0, 1.55, 0.0, 0.0)
}
