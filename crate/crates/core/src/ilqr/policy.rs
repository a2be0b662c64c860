use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::Policy;
use crate::{Action, Gain, State};

/// Time-varying linear-Gaussian controller
/// `u_t ~ N(k_t + K_t (x - x_hat_t), sigma_t)`.
///
/// Steps past the stored length reuse the last step.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianPolicy {
    pub k: Vec<Action>,
    pub gains: Vec<Gain>,
    pub x_hat: Vec<State>,
    pub u_hat: Vec<Action>,
    pub sigma: Vec<Matrix2<f64>>,
    /// Current optimization horizon, in steps.
    pub horizon: usize,
}

impl LinearGaussianPolicy {
    /// Open-loop random feedforward torques in `±k_bound`, no feedback, the
    /// nominal state held at `x0`.
    pub fn random(x0: &State, steps: usize, horizon: usize, k_bound: f64, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k: Vec<Action> = (0..steps)
            .map(|_| Action::new(rng.random_range(-k_bound..=k_bound), rng.random_range(-k_bound..=k_bound)))
            .collect();
        LinearGaussianPolicy {
            u_hat: k.clone(),
            k,
            gains: vec![Gain::zeros(); steps],
            x_hat: vec![*x0; steps],
            sigma: vec![Matrix2::identity() * sigma; steps],
            horizon: horizon.min(steps),
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    fn index(&self, t: usize) -> usize {
        t.min(self.len().saturating_sub(1))
    }

    pub fn mean_at(&self, x: &State, t: usize) -> Action {
        let i = self.index(t);
        self.k[i] + self.gains[i] * (x - self.x_hat[i])
    }

    /// `(k, K, x_hat)` of the controller used at step `t`.
    pub fn terms_at(&self, t: usize) -> (Action, Gain, State) {
        let i = self.index(t);
        (self.k[i], self.gains[i], self.x_hat[i])
    }

    pub fn covariance_at(&self, t: usize) -> Matrix2<f64> {
        self.sigma[self.index(t)]
    }

    /// The same controller with each of the first `states.len()` steps
    /// re-expressed around `states[t]` and its mean there clipped to
    /// `±limit`. Other steps are copied unchanged.
    pub fn recentered(&self, states: &[State], limit: f64) -> Self {
        let mut p = self.clone();
        let need = states.len();
        if p.len() < need && !p.is_empty() {
            let last = p.len() - 1;
            p.k.resize(need, p.k[last]);
            p.gains.resize(need, p.gains[last]);
            p.x_hat.resize(need, p.x_hat[last]);
            p.u_hat.resize(need, p.u_hat[last]);
            p.sigma.resize(need, p.sigma[last]);
        }
        for (t, x) in states.iter().enumerate() {
            let m = self.mean_at(x, t).map(|v| v.clamp(-limit, limit));
            p.k[t] = m;
            p.u_hat[t] = m;
            p.x_hat[t] = *x;
        }
        p
    }
}

impl Policy for LinearGaussianPolicy {
    fn mean_action(&self, x: &State, t: usize) -> Action {
        self.mean_at(x, t)
    }
}
