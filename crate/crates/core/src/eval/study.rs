
use alloc::vec::Vec;
use nalgebra::Matrix2;

use super::{phvs, EvalReport, ReportCell};
use crate::dynamics::{FitConfig, FitError};
use crate::exec::Executor;
use crate::ilqr::{derive_seed, DynamicsSource, HopperCost, HopperPlant, IlqrConfig, IlqrError, IlqrOptimizer, LinearGaussianPolicy};
use crate::sim::{rollout, Hopper, SimError, TerrainConfig};
use crate::State;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStudyConfig {
    pub sample_counts: Vec<usize>,
    pub runs: usize,
    pub iterations: usize,
    /// Horizon in control steps.
    pub horizon: usize,
    pub start: State,
    /// Also run the finite-difference reference.
    pub reference: bool,
    pub hopper: Hopper,
    pub ilqr: IlqrConfig,
    pub fit: FitConfig,
    pub cost: HopperCost,
    pub seed: u64,
}

impl Default for SampleStudyConfig {
    fn default() -> Self {
        SampleStudyConfig {
            sample_counts: (1..=10).collect(),
            runs: 50,
            iterations: 30,
            horizon: 50,
            start: crate::x0_first(),
            reference: true,
            hopper: Hopper::default(),
            ilqr: IlqrConfig::default(),
            fit: FitConfig::default(),
            cost: HopperCost::default(),
            seed: 0,
        }
    }
}

impl SampleStudyConfig {
    /// Run `r` uses the same seed for every sample count.
    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, 400, run as u64)
    }
}

/// Outcome of one optimization in the study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRun {
    /// PHVS of the final policy's noise-free rollout.
    pub phvs: f64,
    pub aborted: bool,
    pub iterations: usize,
    /// Iterations lost to ill-conditioned dynamics fits.
    pub ill_conditioned: usize,
    /// Mean per-step KL of every accepted iteration.
    pub accepted_kl: Vec<f64>,
}

fn is_ill_conditioned(e: &IlqrError) -> bool {
    match e {
        IlqrError::Fit(FitError::IllConditioned { .. } | FitError::IllConditionedAt { .. }) => true,
        IlqrError::Aborted { last, .. } => is_ill_conditioned(last),
        _ => false,
    }
}

/// One optimization with `samples` rollouts per iteration, or the
/// finite-difference reference when `source` is ground truth.
pub fn sample_study_run(config: &SampleStudyConfig, source: DynamicsSource, samples: usize, run: usize) -> Result<StudyRun, SimError> {
    let seed = config.run_seed(run);
    let mut ic = config.ilqr.clone();
    ic.rollouts = samples.max(1);
    ic.max_horizon = config.horizon;
    ic.initial_horizon = ic.initial_horizon.min(config.horizon);
    let policy = LinearGaussianPolicy::random(
        &config.start,
        ic.max_horizon,
        ic.initial_horizon,
        ic.init_fraction * ic.tau_max,
        ic.policy_sigma,
        seed,
    );
    let mut plant = HopperPlant::new(config.start);
    plant.hopper = config.hopper.clone();
    let mut opt = IlqrOptimizer::new(plant, config.cost, ic, config.fit.clone(), source, policy, seed);
    let outcome = opt.run(config.iterations);
    let mut ill = opt.reports.iter().filter(|r| r.error.as_ref().is_some_and(is_ill_conditioned)).count();
    if let Err(e) = &outcome {
        if is_ill_conditioned(e) {
            ill += 1;
        }
    }
    let traj = rollout(&config.hopper, &opt.policy, &config.start, &TerrainConfig::flat(), config.horizon, &Matrix2::zeros(), seed)?;
    Ok(StudyRun {
        phvs: phvs(&traj),
        aborted: outcome.is_err(),
        iterations: opt.reports.len(),
        ill_conditioned: ill,
        accepted_kl: opt.reports.iter().filter(|r| r.accepted).map(|r| r.mean_kl).collect(),
    })
}

/// Cells per sample count (`param1`): `dyn_study` PHVS and
/// `dyn_study_failures` ill-conditioned iterations per run. The reference
/// has `param1 = 0` under `dyn_study_reference`.
pub fn dynamics_sample_study<E: Executor>(config: &SampleStudyConfig, exec: &E) -> Result<(EvalReport, Vec<StudyRun>), SimError> {
    let mut report = EvalReport::new("dyn_study");
    let mut all = Vec::new();
    let mut jobs: Vec<(DynamicsSource, usize, &'static str)> =
        config.sample_counts.iter().map(|&n| (DynamicsSource::Learned, n, "dyn_study")).collect();
    if config.reference {
        jobs.push((DynamicsSource::GroundTruth, 0, "dyn_study_reference"));
    }
    let flat: Vec<(DynamicsSource, usize, usize)> =
        jobs.iter().flat_map(|&(source, n, _)| (0..config.runs).map(move |r| (source, n, r))).collect();
    let results = exec.map(flat, |(source, n, r)| sample_study_run(config, source, n, r));
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut chunks = results.chunks(config.runs.max(1));
    for (source, n, name) in jobs {
        let runs: Vec<StudyRun> = if config.runs == 0 { Vec::new() } else { chunks.next().expect("one chunk per cell").to_vec() };
        let p: Vec<f64> = runs.iter().map(|r| r.phvs).collect();
        let f: Vec<f64> = runs.iter().map(|r| r.ill_conditioned as f64).collect();
        report.cells.push(ReportCell::from_values(name, n as f64, 0.0, 0.0, &p, config.run_seed(0)));
        if source == DynamicsSource::Learned {
            report.cells.push(ReportCell::from_values("dyn_study_failures", n as f64, 0.0, 0.0, &f, config.run_seed(0)));
        }
        all.extend(runs);
    }
    Ok((report, all))
}
