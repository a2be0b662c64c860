use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::{FitConfig, LinearGaussianDynamics};
use crate::sim::{StepEvents, Termination, Trajectory};
use crate::{Action, State, STATE_DIM, XU_DIM};

type Ax = SMatrix<f64, STATE_DIM, STATE_DIM>;
type Bx = SMatrix<f64, STATE_DIM, 2>;

/// `x' = A x + B u` on the first six coordinates; the contact slot stays 0.
struct LinearPlant {
    a: Ax,
    b: Bx,
    x0: State,
}

impl LinearPlant {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Ax::zeros();
        let mut b = Bx::zeros();
        for i in 0..6 {
            a[(i, i)] = 0.9;
            for j in 0..6 {
                a[(i, j)] += rng.random_range(-0.05..0.05);
            }
            for j in 0..2 {
                b[(i, j)] = rng.random_range(-0.5..0.5);
            }
        }
        let x0 = State::from_fn(|i, _| if i < 6 { rng.random_range(-0.2..0.2) } else { 0.0 });
        LinearPlant { a, b, x0 }
    }
}

impl Plant for LinearPlant {
    fn rollout(&self, policy: &LinearGaussianPolicy, steps: usize, noise_var: f64, seed: u64) -> Result<Trajectory, IlqrError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = vec![self.x0];
        let mut actions = Vec::new();
        for t in 0..steps {
            let x = states[t];
            let mut u = policy.mean_at(&x, t);
            if noise_var > 0.0 {
                u += Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * noise_var.sqrt();
            }
            states.push(self.a * x + self.b * u);
            actions.push(u);
        }
        Ok(Trajectory {
            dt: 0.01,
            horizon: steps,
            costs: vec![0.0; steps],
            events: vec![StepEvents::default(); steps],
            sim_states: Vec::new(),
            termination: None,
            states,
            actions,
        })
    }

    fn linearize(&self, traj: &Trajectory) -> Result<LinearGaussianDynamics, IlqrError> {
        let mut f = SMatrix::<f64, STATE_DIM, XU_DIM>::zeros();
        f.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0).copy_from(&self.a);
        f.fixed_view_mut::<STATE_DIM, 2>(0, STATE_DIM).copy_from(&self.b);
        let n = traj.steps();
        Ok(LinearGaussianDynamics {
            f_xu: vec![f; n],
            f_c: vec![State::zeros(); n],
            cov: vec![SMatrix::identity() * 1e-6; n],
            sample_counts: vec![1; n],
            condition: vec![1.0; n],
        })
    }
}

/// `0.5 x^T Q x + 0.5 u^T R u` with a single mode.
struct QuadraticCost {
    hess: SMatrix<f64, XU_DIM, XU_DIM>,
}

impl CostModel for QuadraticCost {
    fn mode(&self, _: &State) -> CostMode {
        CostMode::Jump
    }

    fn expand(&self, mode: CostMode, x: &State, u: &Action) -> QuadraticCostExpansion {
        let z = SVector::<f64, XU_DIM>::from_fn(|i, _| if i < STATE_DIM { x[i] } else { u[i - STATE_DIM] });
        let grad = self.hess * z;
        QuadraticCostExpansion { grad, hess: self.hess, constant: 0.5 * z.dot(&grad), mode }
    }
}

fn lq_optimizer(horizon: usize) -> IlqrOptimizer<LinearPlant, QuadraticCost> {
    let mut hess = SMatrix::<f64, XU_DIM, XU_DIM>::zeros();
    for i in 0..6 {
        hess[(i, i)] = 1.0;
    }
    hess[(7, 7)] = 0.1;
    hess[(8, 8)] = 0.1;
    let plant = LinearPlant::random(4);
    let config = IlqrConfig {
        epsilon_kl: f64::INFINITY,
        eta_min: 1e-9,
        eta_max: 1e3,
        initial_horizon: horizon,
        max_horizon: horizon,
        ..IlqrConfig::default()
    };
    let policy = LinearGaussianPolicy::random(&plant.x0, horizon, horizon, 0.01, config.policy_sigma, 1);
    IlqrOptimizer::new(plant, QuadraticCost { hess }, config, FitConfig::default(), DynamicsSource::GroundTruth, policy, 7)
}

#[test]
fn linear_quadratic_loop_reaches_a_fixed_point() {
    let mut opt = lq_optimizer(20);
    let mut last = opt.policy.gains.clone();
    let mut change = f64::INFINITY;
    for _ in 0..5 {
        opt.iterate().unwrap();
        change = opt.policy.gains.iter().zip(&last).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        last = opt.policy.gains.clone();
        if change < 1e-6 {
            break;
        }
    }
    assert!(change < 1e-6, "gain change {change}");
    assert!(opt.reports.iter().all(|r| r.accepted));
}

#[test]
fn zero_iterations_leave_the_policy_alone() {
    let mut opt = lq_optimizer(10);
    let before = opt.policy.clone();
    opt.run(0).unwrap();
    assert_eq!(opt.policy, before);
    assert!(opt.reports.is_empty());
}

fn hovering(len: usize, h: f64) -> Trajectory {
    let mut x = State::zeros();
    x[0] = h;
    Trajectory {
        dt: 0.01,
        horizon: len,
        states: vec![x; len + 1],
        actions: vec![Action::zeros(); len],
        costs: vec![0.0; len],
        events: vec![StepEvents::default(); len],
        sim_states: Vec::new(),
        termination: None,
    }
}

#[test]
fn horizon_growth() {
    let config = IlqrConfig::default();
    assert_eq!(extend_horizon(50, &hovering(50, 0.2), &config), 55);
    assert_eq!(extend_horizon(98, &hovering(98, 0.2), &config), 100);
    assert_eq!(extend_horizon(100, &hovering(100, 0.2), &config), 100);
    assert_eq!(extend_horizon(50, &hovering(50, 0.11), &config), 50);
    let mut fell = hovering(30, 0.2);
    fell.termination = Some(Termination::Fall { step: 30 });
    assert_eq!(extend_horizon(30, &fell, &config), 30);
    let mut dipped = hovering(50, 0.2);
    dipped.states[45][0] = 0.119;
    assert_eq!(extend_horizon(50, &dipped, &config), 50);
    dipped.states[35][0] = 0.05;
    dipped.states[45][0] = 0.2;
    assert_eq!(extend_horizon(50, &dipped, &config), 55);
}

#[test]
fn recentered_policy_keeps_its_action_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = State::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let mut p = LinearGaussianPolicy::random(&x0, 6, 6, 0.5, 0.01, 3);
    for g in &mut p.gains {
        *g = crate::Gain::from_fn(|_, _| rng.random_range(-0.3..0.3));
    }
    let states: Vec<State> = (0..4).map(|_| State::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    let r = p.recentered(&states, 10.0);
    for (t, x) in states.iter().enumerate() {
        assert!((r.mean_at(x, t) - p.mean_at(x, t)).amax() < 1e-12);
        let y = x.map(|v| v + 0.1);
        assert!((r.mean_at(&y, t) - p.mean_at(&y, t)).amax() < 1e-12);
    }
    assert_eq!(r.k[5], p.k[5]);
    let clipped = p.recentered(&states, 0.05);
    assert!(clipped.k[..4].iter().all(|k| k.amax() <= 0.05));
}

#[test]
fn hopper_iteration_reports_are_consistent() {
    let x0 = crate::x0_first();
    let config = IlqrConfig::default();
    let policy = LinearGaussianPolicy::random(&x0, config.max_horizon, config.initial_horizon, 0.13, config.policy_sigma, 5);
    let mut opt = IlqrOptimizer::new(
        HopperPlant::new(x0),
        HopperCost::default(),
        config.clone(),
        FitConfig::default(),
        DynamicsSource::Learned,
        policy,
        5,
    );
    opt.run(3).unwrap();
    for r in &opt.reports {
        assert!(r.accepted);
        assert!(r.mean_kl <= config.epsilon_kl + 1e-9);
        assert!(r.optimized_steps <= r.horizon);
    }
    let limit = config.torque_fraction * config.tau_max;
    assert!(opt.policy.k.iter().take(opt.reports[2].optimized_steps).all(|k| k.amax() <= limit + 1e-12));
}

fn lq_problem(opt: &IlqrOptimizer<LinearPlant, QuadraticCost>) -> LocalProblem {
    let nominal = opt.plant.rollout(&opt.policy, opt.policy.horizon, 0.0, 0).unwrap();
    let dynamics = opt.plant.linearize(&nominal).unwrap();
    opt.local_problem(&nominal, &dynamics, nominal.steps())
}

#[test]
fn unbounded_trust_region_takes_the_smallest_eta() {
    let opt = lq_optimizer(15);
    let problem = lq_problem(&opt);
    let config = IlqrConfig { epsilon_kl: f64::INFINITY, ..IlqrConfig::default() };
    let out = eta_linesearch(&problem, &opt.policy, &config).unwrap();
    assert_eq!(out.eta, config.eta_min);
    assert_eq!(out.probes.len(), 1, "{:?}", out.probes);
}

#[test]
fn optimal_old_policy_is_kept() {
    let mut opt = lq_optimizer(15);
    opt.run(3).unwrap();
    let problem = lq_problem(&opt);
    let config = IlqrConfig { eta_min: 1e-9, ..IlqrConfig::default() };
    let out = eta_linesearch(&problem, &opt.policy, &config).unwrap();
    assert_eq!(out.eta, config.eta_min);
    assert!(out.mean_kl() < 1e-9, "kl {}", out.mean_kl());
    assert!(out.policy.k.iter().zip(&opt.policy.k).all(|(a, b)| (a - b).amax() < 1e-5));
}

#[test]
fn kl_shrinks_as_eta_grows() {
    let opt = lq_optimizer(15);
    let problem = lq_problem(&opt);
    let config = IlqrConfig::default();
    let kls: Vec<f64> = eta_grid(&config)
        .into_iter()
        .map(|eta| {
            let (_, kl) = solve_for_eta(&problem, &opt.policy, &config, eta).unwrap();
            kl.iter().sum::<f64>() / kl.len() as f64
        })
        .collect();
    log::info!("mean KL over the eta grid: {kls:?}");
    assert!(kls.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{kls:?}");
}
