//! Switching jump/land stage costs and their closed-form quadratic expansion.

use nalgebra::{SMatrix, SVector};

use crate::{idx, Action, State, XU_DIM};

const ANGLE_WEIGHT: f64 = 0.2;
const TORQUE_WEIGHT: f64 = 0.001;
/// Hip height below which the robot counts as close to the ground.
pub const JUMP_HEIGHT: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostMode {
    /// Near or on the ground: extend the leg.
    Jump,
    /// Airborne: fold the leg into the landing pose.
    Land,
}

impl CostMode {
    /// Target `(phi_h, phi_k)`.
    pub fn target(self) -> (f64, f64) {
        match self {
            CostMode::Jump => (0.0, 0.0),
            CostMode::Land => (1.3, 2.3),
        }
    }
}

pub fn select_cost_mode(x: &State) -> CostMode {
    if x[idx::CONTACT] > 0.5 || x[idx::H] < JUMP_HEIGHT {
        CostMode::Jump
    } else {
        CostMode::Land
    }
}

pub fn stage_cost(x: &State, u: &Action, mode: CostMode) -> f64 {
    let (th, tk) = mode.target();
    let dh = x[idx::PHI_H] - th;
    let dk = x[idx::PHI_K] - tk;
    ANGLE_WEIGHT * (dh * dh + dk * dk) + TORQUE_WEIGHT * u.norm_squared()
}

/// Second-order expansion of a stage cost in the concatenated `(x, u)`:
/// `l(xu + d) = constant + grad . d + 0.5 d^T hess d`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCostExpansion {
    pub grad: SVector<f64, XU_DIM>,
    pub hess: SMatrix<f64, XU_DIM, XU_DIM>,
    pub constant: f64,
    pub mode: CostMode,
}

/// Exact expansion of [`stage_cost`] about `(x, u)`; the Hessian does not
/// depend on the expansion point.
pub fn quadratize_cost(mode: CostMode, x: &State, u: &Action) -> QuadraticCostExpansion {
    let (th, tk) = mode.target();
    let mut grad = SVector::<f64, XU_DIM>::zeros();
    let mut hess = SMatrix::<f64, XU_DIM, XU_DIM>::zeros();
    grad[idx::PHI_H] = 2.0 * ANGLE_WEIGHT * (x[idx::PHI_H] - th);
    grad[idx::PHI_K] = 2.0 * ANGLE_WEIGHT * (x[idx::PHI_K] - tk);
    grad[7] = 2.0 * TORQUE_WEIGHT * u[0];
    grad[8] = 2.0 * TORQUE_WEIGHT * u[1];
    hess[(idx::PHI_H, idx::PHI_H)] = 2.0 * ANGLE_WEIGHT;
    hess[(idx::PHI_K, idx::PHI_K)] = 2.0 * ANGLE_WEIGHT;
    hess[(7, 7)] = 2.0 * TORQUE_WEIGHT;
    hess[(8, 8)] = 2.0 * TORQUE_WEIGHT;
    QuadraticCostExpansion { grad, hess, constant: stage_cost(x, u, mode), mode }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state;
    use rand::{Rng, SeedableRng};

    #[test]
    fn stage_cost_values() {
        let u0 = Action::zeros();
        let folded = state(0.2, 0.0, 1.3, 0.0, 2.3, 0.0, 0.0);
        let straight = state(0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(stage_cost(&straight, &u0, CostMode::Jump), 0.0);
        assert_eq!(stage_cost(&folded, &u0, CostMode::Land), 0.0);
        assert!((stage_cost(&folded, &u0, CostMode::Jump) - 1.396).abs() < 1e-12);
    }

    #[test]
    fn mode_selection() {
        assert_eq!(select_cost_mode(&state(0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)), CostMode::Jump);
        assert_eq!(select_cost_mode(&state(0.30, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)), CostMode::Land);
        assert_eq!(select_cost_mode(&state(0.14, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)), CostMode::Jump);
    }

    #[test]
    fn hessian_is_constant_diagonal() {
        let e = quadratize_cost(CostMode::Jump, &state(0.1, 2.0, 0.3, 1.0, -0.2, 0.0, 1.0), &Action::new(0.4, -0.1));
        let mut want = SMatrix::<f64, XU_DIM, XU_DIM>::zeros();
        want[(2, 2)] = 0.4;
        want[(4, 4)] = 0.4;
        want[(7, 7)] = 0.002;
        want[(8, 8)] = 0.002;
        assert_eq!(e.hess, want);
        let at_min = quadratize_cost(CostMode::Land, &state(0.3, 0.0, 1.3, 0.0, 2.3, 0.0, 0.0), &Action::zeros());
        assert_eq!(at_min.grad, SVector::<f64, XU_DIM>::zeros());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let xu: SVector<f64, XU_DIM> = SVector::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let mode = if rng.random_bool(0.5) { CostMode::Jump } else { CostMode::Land };
            let split = |v: &SVector<f64, XU_DIM>| (State::from_fn(|i, _| v[i]), Action::new(v[7], v[8]));
            let (x, u) = split(&xu);
            let e = quadratize_cost(mode, &x, &u);
            for i in 0..XU_DIM {
                let h = 1e-6;
                let mut p = xu;
                let mut m = xu;
                p[i] += h;
                m[i] -= h;
                let (xp, up) = split(&p);
                let (xm, um) = split(&m);
                let fd = (stage_cost(&xp, &up, mode) - stage_cost(&xm, &um, mode)) / (2.0 * h);
                let denom = e.grad[i].abs().max(1e-3);
                assert!((fd - e.grad[i]).abs() / denom < 1e-6, "dim {i}: {fd} vs {}", e.grad[i]);
            }
        }
    }
}
