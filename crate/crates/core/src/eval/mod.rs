//! The PHVS metric and the robustness studies: action noise, terrain
//! changes, long runs on randomly changing ground, feedback introspection
//! and the dynamics sample-count study.

mod introspect;
mod scenarios;
mod study;

pub use introspect::{
    fig6_terrain, flight_gain_ratio, introspect, lead_lag, IntrospectionStep, FIRST_IMPACT_NOT_FOUND,
};
pub use scenarios::{
    marathon, marathon_run, noise_runs, noise_sweep, random_initial_states, terrain_for, terrain_run, terrain_sweep,
    MarathonConfig, NoiseSweepConfig, RunOutcome, TerrainMode, TerrainSweepConfig, INITIAL_BOX,
};
pub use study::{dynamics_sample_study, sample_study_run, SampleStudyConfig, StudyRun};

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;

use crate::idx;
use crate::sim::Trajectory;

/// Positive hip velocity squared: mean of `max(0, hdot)^2` over the states
/// reached after each action.
pub fn phvs(traj: &Trajectory) -> f64 {
    let n = traj.steps();
    if n == 0 {
        return 0.0;
    }
    traj.states[1..=n].iter().map(|x| x[idx::HDOT].max(0.0).powi(2)).sum::<f64>() / n as f64
}

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&dev) / n).sqrt())
}

/// One condition of a study.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub scenario: String,
    pub param1: f64,
    pub param2: f64,
    pub beta: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Seed of the first run in the cell.
    pub seed0: u64,
}

impl ReportCell {
    pub fn from_values(scenario: &str, param1: f64, param2: f64, beta: f64, values: &[f64], seed0: u64) -> Self {
        let (mean, std) = mean_std(values);
        ReportCell { scenario: scenario.into(), param1, param2, beta, mean, std, n: values.len(), seed0 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub scenario: String,
    pub cells: Vec<ReportCell>,
}

impl EvalReport {
    pub fn new(scenario: &str) -> Self {
        EvalReport { scenario: scenario.into(), cells: Vec::new() }
    }

    /// Cells of one scenario whose parameters match.
    pub fn find(&self, scenario: &str, param1: f64, param2: f64, beta: f64) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.scenario == scenario && c.param1 == param1 && c.param2 == param2 && c.beta == beta)
    }
}
