//! End-to-end procedure: optimize one local policy per start state, sweep
//! injected action noise to collect a distillation dataset, train both
//! networks.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::Matrix2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{FitConfig, LinearGaussianDynamics};
use crate::ilqr::{
    derive_seed, DynamicsSource, HopperCost, HopperPlant, IlqrConfig, IlqrError, IlqrOptimizer, IterationReport,
    LinearGaussianPolicy,
};
use crate::nn::{train, DistillationDataset, DistillationRecord, NetKind, NnError, TrainConfig, TrainedNet};
use crate::sim::{rollout, Hopper, SimError, TerrainConfig};
use crate::exec::Executor;
use crate::State;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("policy {policy}: {source}")]
    Optimize { policy: usize, source: IlqrError },
    #[error("dataset rollout failed: {0}")]
    Rollout(#[from] SimError),
    #[error("{kind} network: {source}")]
    Train { kind: &'static str, source: NnError },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub starts: Vec<State>,
    pub iterations: usize,
    pub hopper: Hopper,
    pub ilqr: IlqrConfig,
    pub fit: FitConfig,
    pub cost: HopperCost,
    pub source: DynamicsSource,
    /// Rollout length in control steps for dataset generation.
    pub steps: usize,
    pub gamma_max: f64,
    pub gamma_step: f64,
    pub rollouts_per_gamma: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            starts: alloc::vec![crate::x0_first(), crate::x0_second()],
            iterations: 50,
            hopper: Hopper::default(),
            ilqr: IlqrConfig::default(),
            fit: FitConfig::default(),
            cost: HopperCost::default(),
            source: DynamicsSource::Learned,
            steps: 100,
            gamma_max: 0.30,
            gamma_step: 0.01,
            rollouts_per_gamma: 5,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Noise variances `0, step, 2 step, ...` up to `gamma_max` inclusive.
    pub fn gammas(&self) -> Vec<f64> {
        if self.gamma_step <= 0.0 {
            return alloc::vec![0.0];
        }
        let n = (self.gamma_max / self.gamma_step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.gamma_step).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.starts.is_empty() {
            return Err(PipelineError::InvalidConfig("at least one start state is required"));
        }
        if self.steps == 0 {
            return Err(PipelineError::InvalidConfig("steps must be positive"));
        }
        if !(self.gamma_max >= 0.0) || !(self.gamma_step >= 0.0) {
            return Err(PipelineError::InvalidConfig("gamma grid must be non-negative"));
        }
        if self.ilqr.initial_horizon == 0 || self.ilqr.initial_horizon > self.ilqr.max_horizon {
            return Err(PipelineError::InvalidConfig("initial horizon must lie in 1..=max_horizon"));
        }
        self.train.validate().map_err(|e| PipelineError::Train { kind: "any", source: e })
    }

    /// iLQR rollouts spent on one local policy.
    pub fn optimization_episodes(&self) -> usize {
        match self.source {
            DynamicsSource::Learned => self.iterations * self.ilqr.rollouts,
            DynamicsSource::GroundTruth => 0,
        }
    }

    /// Rollouts in the noise sweep across all policies.
    pub fn sweep_episodes(&self) -> usize {
        self.gammas().len() * self.rollouts_per_gamma * self.starts.len()
    }

    pub fn policy_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, 1, index as u64)
    }
}

/// A finished local policy optimization.
#[derive(Clone, Debug)]
pub struct LocalPolicyRun {
    pub start: State,
    pub policy: LinearGaussianPolicy,
    pub reports: Vec<IterationReport>,
    pub dynamics: Option<LinearGaussianDynamics>,
}

/// Runs the configured number of iLQR iterations from `x0`.
pub fn optimize_local_policy(x0: &State, index: usize, config: &ExperimentConfig) -> Result<LocalPolicyRun, PipelineError> {
    let seed = config.policy_seed(index);
    let ic = &config.ilqr;
    let policy = LinearGaussianPolicy::random(
        x0,
        ic.max_horizon,
        ic.initial_horizon,
        ic.init_fraction * ic.tau_max,
        ic.policy_sigma,
        seed,
    );
    let mut plant = HopperPlant::new(*x0);
    plant.hopper = config.hopper.clone();
    let mut opt = IlqrOptimizer::new(plant, config.cost, ic.clone(), config.fit.clone(), config.source, policy, seed);
    opt.run(config.iterations).map_err(|e| PipelineError::Optimize { policy: index, source: e })?;
    Ok(LocalPolicyRun { start: *x0, policy: opt.policy, reports: opt.reports, dynamics: opt.last_dynamics })
}

/// One noisy rollout of the sweep, logged as distillation records.
/// A fallen rollout contributes its prefix.
pub fn dataset_episode(
    policy: &LinearGaussianPolicy,
    policy_index: usize,
    start: &State,
    gamma_index: usize,
    gamma: f64,
    episode: usize,
    config: &ExperimentConfig,
) -> Result<Vec<DistillationRecord>, PipelineError> {
    let seed = derive_seed(derive_seed(config.seed, 2, policy_index as u64), gamma_index as u64, episode as u64);
    let cov = Matrix2::identity() * gamma;
    let traj = rollout(&config.hopper, policy, start, &TerrainConfig::flat(), config.steps, &cov, seed)?;
    Ok((0..traj.steps())
        .map(|t| {
            let x = traj.states[t];
            let (k, gain, x_hat) = policy.terms_at(t);
            DistillationRecord {
                x,
                g: policy.mean_at(&x, t),
                k,
                gain,
                x_hat,
                policy: policy_index,
                gamma,
                episode,
                t,
            }
        })
        .collect())
}

/// Every `(policy, gamma index, episode)` of the sweep in canonical order.
pub fn sweep_plan(config: &ExperimentConfig, policies: usize) -> Vec<(usize, usize, f64, usize)> {
    let gammas = config.gammas();
    let mut plan = Vec::with_capacity(policies * gammas.len() * config.rollouts_per_gamma);
    for p in 0..policies {
        for (gi, &g) in gammas.iter().enumerate() {
            for e in 0..config.rollouts_per_gamma {
                plan.push((p, gi, g, e));
            }
        }
    }
    plan
}

/// Concatenates episodes in plan order and shuffles with the run seed.
pub fn assemble_dataset(episodes: Vec<Vec<DistillationRecord>>, seed: u64) -> DistillationDataset {
    let mut records: Vec<DistillationRecord> = episodes.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, 0));
    records.shuffle(&mut rng);
    DistillationDataset { records }
}

/// Sweeps the noise grid with every policy; `policies[i]` starts from
/// `starts[i]`.
pub fn generate_dataset<E: Executor>(
    policies: &[LinearGaussianPolicy],
    starts: &[State],
    config: &ExperimentConfig,
    exec: &E,
) -> Result<DistillationDataset, PipelineError> {
    if policies.len() != starts.len() {
        return Err(PipelineError::InvalidConfig("one start state per policy is required"));
    }
    let episodes = exec
        .map(sweep_plan(config, policies.len()), |(p, gi, g, e)| {
            dataset_episode(&policies[p], p, &starts[p], gi, g, e, config)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_dataset(episodes, config.seed))
}

pub fn train_network(dataset: &DistillationDataset, kind: NetKind, config: &ExperimentConfig) -> Result<TrainedNet, PipelineError> {
    let tc = TrainConfig { seed: derive_seed(config.seed, 4 + kind as u64, config.train.seed), ..config.train.clone() };
    train(&dataset.records, kind, &tc).map_err(|e| PipelineError::Train { kind: kind.label(), source: e })
}

#[derive(Clone, Debug)]
pub struct Artifacts {
    pub runs: Vec<LocalPolicyRun>,
    pub dataset: DistillationDataset,
    pub torque: TrainedNet,
    pub feedback: TrainedNet,
}

/// Optimizes one local policy per start state.
pub fn optimize_all<E: Executor>(config: &ExperimentConfig, exec: &E) -> Result<Vec<LocalPolicyRun>, PipelineError> {
    let jobs: Vec<(usize, State)> = config.starts.iter().copied().enumerate().collect();
    exec.map(jobs, |(i, x0)| optimize_local_policy(&x0, i, config)).into_iter().collect()
}

/// Every stage in order. The two networks train concurrently when `exec`
/// allows it.
pub fn run_full<E: Executor>(config: &ExperimentConfig, exec: &E) -> Result<Artifacts, PipelineError> {
    config.validate()?;
    let runs = optimize_all(config, exec)?;
    let policies: Vec<LinearGaussianPolicy> = runs.iter().map(|r| r.policy.clone()).collect();
    let dataset = generate_dataset(&policies, &config.starts, config, exec)?;
    let mut nets = exec.map(alloc::vec![NetKind::Torque, NetKind::Feedback], |k| train_network(&dataset, k, config));
    let feedback = nets.pop().expect("two networks")?;
    let torque = nets.pop().expect("two networks")?;
    Ok(Artifacts { runs, dataset, torque, feedback })
}
