#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Mlp, NnError};
use crate::linalg::{from_dyn, sqrt_psd, to_dyn};
use crate::sim::Policy;
use crate::{Action, Gain, State, ACTION_DIM, STATE_DIM};

/// Hidden layer widths shared by both networks.
pub const HIDDEN: [usize; 3] = [10, 10, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetKind {
    Torque,
    Feedback,
}

impl NetKind {
    pub fn output_dim(self) -> usize {
        match self {
            NetKind::Torque => ACTION_DIM,
            NetKind::Feedback => ACTION_DIM + ACTION_DIM * STATE_DIM + STATE_DIM,
        }
    }

    pub fn layer_sizes(self) -> Vec<usize> {
        let mut s = Vec::with_capacity(HIDDEN.len() + 2);
        s.push(STATE_DIM);
        s.extend_from_slice(&HIDDEN);
        s.push(self.output_dim());
        s
    }

    pub fn label(self) -> &'static str {
        match self {
            NetKind::Torque => "torque",
            NetKind::Feedback => "feedback",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "torque" => Some(NetKind::Torque),
            "feedback" => Some(NetKind::Feedback),
            _ => None,
        }
    }
}

/// Per-coordinate input standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: State,
    pub std: State,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { mean: State::zeros(), std: State::repeat(1.0) }
    }
}

impl Normalizer {
    /// Coordinates with (near) zero spread keep unit scale.
    pub fn fit<'a, I: IntoIterator<Item = &'a State>>(states: I) -> Self {
        let mut n = 0usize;
        let mut sum = State::zeros();
        let mut sq = State::zeros();
        for x in states {
            n += 1;
            sum += x;
            sq += x.component_mul(x);
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean.component_mul(&mean);
        let std = var.map(|v| if v > 1e-16 { v.sqrt() } else { 1.0 });
        Normalizer { mean, std }
    }

    pub fn apply(&self, x: &State) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// `k + K (x - x_hat)`.
pub fn feedback_compose(k: &Action, gain: &Gain, x_hat: &State, x: &State) -> Action {
    k + gain * (x - x_hat)
}

/// Maps the state straight to the action mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TorqueNet {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
}

impl TorqueNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        TorqueNet { mlp: Mlp::new(&NetKind::Torque.layer_sizes(), rng), normalizer: Normalizer::default() }
    }

    pub fn mean(&self, x: &State) -> Action {
        let out = self.mlp.forward(&self.normalizer.apply(x)).expect("torque net input is a state");
        Action::new(out[0], out[1])
    }
}

/// Emits a feedforward torque, a feedback gain and a nominal state.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackNet {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
}

impl FeedbackNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        FeedbackNet { mlp: Mlp::new(&NetKind::Feedback.layer_sizes(), rng), normalizer: Normalizer::default() }
    }

    /// `(k, K, x_hat)`; `K` is read row-major from the middle head.
    pub fn heads(&self, x: &State) -> (Action, Gain, State) {
        let out = self.mlp.forward(&self.normalizer.apply(x)).expect("feedback net input is a state");
        split_heads(&out)
    }

    pub fn mean(&self, x: &State) -> Action {
        let (k, gain, x_hat) = self.heads(x);
        feedback_compose(&k, &gain, &x_hat, x)
    }
}

pub(crate) fn split_heads(out: &[f64]) -> (Action, Gain, State) {
    let k = Action::from_column_slice(&out[..ACTION_DIM]);
    let gain = Gain::from_row_slice(&out[ACTION_DIM..ACTION_DIM + ACTION_DIM * STATE_DIM]);
    let x_hat = State::from_column_slice(&out[ACTION_DIM + ACTION_DIM * STATE_DIM..]);
    (k, gain, x_hat)
}

/// Either distilled network, usable as a time-independent [`Policy`].
#[derive(Clone, Debug, PartialEq)]
pub enum NetPolicy {
    Torque(TorqueNet),
    Feedback(FeedbackNet),
}

impl NetPolicy {
    pub fn new<R: Rng + ?Sized>(kind: NetKind, rng: &mut R) -> Self {
        match kind {
            NetKind::Torque => NetPolicy::Torque(TorqueNet::new(rng)),
            NetKind::Feedback => NetPolicy::Feedback(FeedbackNet::new(rng)),
        }
    }

    pub fn from_parts(kind: NetKind, mlp: Mlp, normalizer: Normalizer) -> Result<Self, NnError> {
        if mlp.sizes != kind.layer_sizes() || mlp.params.len() != Mlp::param_count(&mlp.sizes) {
            return Err(NnError::ShapeMismatch { expected: Mlp::param_count(&kind.layer_sizes()), found: mlp.params.len() });
        }
        Ok(match kind {
            NetKind::Torque => NetPolicy::Torque(TorqueNet { mlp, normalizer }),
            NetKind::Feedback => NetPolicy::Feedback(FeedbackNet { mlp, normalizer }),
        })
    }

    pub fn kind(&self) -> NetKind {
        match self {
            NetPolicy::Torque(_) => NetKind::Torque,
            NetPolicy::Feedback(_) => NetKind::Feedback,
        }
    }

    pub fn mlp(&self) -> &Mlp {
        match self {
            NetPolicy::Torque(n) => &n.mlp,
            NetPolicy::Feedback(n) => &n.mlp,
        }
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        match self {
            NetPolicy::Torque(n) => &mut n.mlp,
            NetPolicy::Feedback(n) => &mut n.mlp,
        }
    }

    pub fn normalizer(&self) -> &Normalizer {
        match self {
            NetPolicy::Torque(n) => &n.normalizer,
            NetPolicy::Feedback(n) => &n.normalizer,
        }
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        match self {
            NetPolicy::Torque(n) => n.normalizer = normalizer,
            NetPolicy::Feedback(n) => n.normalizer = normalizer,
        }
    }

    pub fn mean(&self, x: &State) -> Action {
        match self {
            NetPolicy::Torque(n) => n.mean(x),
            NetPolicy::Feedback(n) => n.mean(x),
        }
    }

    /// Samples `N(mean, sigma)` and clamps each torque to `±tau_max`.
    pub fn act<R: Rng + ?Sized>(&self, x: &State, sigma: &Matrix2<f64>, tau_max: f64, rng: &mut R) -> Action {
        let mut u = self.mean(x);
        if sigma.iter().any(|&v| v != 0.0) {
            let chol: Matrix2<f64> = from_dyn(&sqrt_psd(&to_dyn(sigma)));
            let z = Action::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
            u += chol * z;
        }
        u.map(|v| v.clamp(-tau_max, tau_max))
    }
}

impl Policy for NetPolicy {
    fn mean_action(&self, x: &State, _: usize) -> Action {
        self.mean(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> State {
        State::from_fn(|_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn compose_at_nominal_returns_feedforward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Action::new(0.3, -0.7);
        let gain = Gain::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let x = random_state(&mut rng);
        assert_eq!(feedback_compose(&k, &gain, &x, &x), k);
        assert_eq!(feedback_compose(&k, &Gain::zeros(), &random_state(&mut rng), &x), k);
    }

    #[test]
    fn compose_matches_explicit_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let k = Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let gain = Gain::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let x_hat = random_state(&mut rng);
            let x = random_state(&mut rng);
            let u = feedback_compose(&k, &gain, &x_hat, &x);
            for r in 0..2 {
                let mut acc = k[r];
                for c in 0..7 {
                    acc += gain[(r, c)] * (x[c] - x_hat[c]);
                }
                assert!((u[r] - acc).abs() < 1e-15 * (1.0 + acc.abs()) * 8.0);
            }
        }
    }

    #[test]
    fn head_split_is_row_major() {
        let out: Vec<f64> = (0..23).map(|i| i as f64).collect();
        let (k, gain, x_hat) = split_heads(&out);
        assert_eq!(k, Action::new(0.0, 1.0));
        assert_eq!(gain[(0, 1)], 3.0);
        assert_eq!(gain[(1, 0)], 9.0);
        assert_eq!(x_hat[0], 16.0);
        assert_eq!(x_hat[6], 22.0);
    }

    #[test]
    fn feedback_mean_is_composed_from_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FeedbackNet::new(&mut rng);
        for _ in 0..20 {
            let x = random_state(&mut rng);
            let (k, gain, x_hat) = net.heads(&x);
            assert_eq!(net.mean(&x), feedback_compose(&k, &gain, &x_hat, &x));
        }
    }

    #[test]
    fn zero_covariance_is_deterministic_and_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NetPolicy::new(NetKind::Torque, &mut rng);
        let x = random_state(&mut rng);
        let m = net.mean(&x);
        let u = net.act(&x, &Matrix2::zeros(), 1e9, &mut rng);
        assert_eq!(u, m);
        let tight = net.act(&x, &Matrix2::zeros(), 1e-3, &mut rng);
        assert!(tight.iter().all(|v| v.abs() <= 1e-3));
    }

    #[test]
    fn sampled_actions_average_to_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = NetPolicy::new(NetKind::Feedback, &mut rng);
        let x = random_state(&mut rng);
        let m = net.mean(&x);
        let sigma = Matrix2::new(0.04, 0.01, 0.01, 0.09);
        let n = 100_000;
        let mut sum = Action::zeros();
        for _ in 0..n {
            sum += net.act(&x, &sigma, 1e9, &mut rng);
        }
        let avg = sum / n as f64;
        for i in 0..2 {
            let tol = 3.0 * sigma[(i, i)].sqrt() / (n as f64).sqrt();
            assert!((avg[i] - m[i]).abs() < tol, "{} vs {}", avg[i], m[i]);
        }
    }

    #[test]
    fn normalizer_standardizes() {
        let xs = [crate::state(1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0), crate::state(3.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0)];
        let n = Normalizer::fit(xs.iter());
        assert_eq!(n.mean[0], 2.0);
        assert_eq!(n.std[0], 1.0);
        assert_eq!(n.std[1], 1.0);
        let z = n.apply(&xs[0]);
        assert_eq!(z[0], -1.0);
        assert_eq!(z[6], -1.0);
    }
}
