#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{phvs, EvalReport, ReportCell};
use crate::exec::Executor;
use crate::ilqr::derive_seed;
use crate::sim::{rollout, Episode, Hopper, Plane, Policy, SimError, TerrainChange, TerrainConfig};
use crate::{Action, State};

/// Sampling box `[(h_lo, h_hi), (phi_h_lo, phi_h_hi), (phi_k_lo, phi_k_hi)]`.
pub const INITIAL_BOX: [(f64, f64); 3] = [(0.15, 0.35), (0.8, 1.5), (1.4, 2.5)];

/// Resting start configurations drawn from [`INITIAL_BOX`], rejecting any
/// that touch the ground.
pub fn random_initial_states<R: Rng + ?Sized>(n: usize, hopper: &Hopper, rng: &mut R) -> Vec<State> {
    let plane = Plane::flat(0.0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = crate::state(
            rng.random_range(INITIAL_BOX[0].0..INITIAL_BOX[0].1),
            0.0,
            rng.random_range(INITIAL_BOX[1].0..INITIAL_BOX[1].1),
            0.0,
            rng.random_range(INITIAL_BOX[2].0..INITIAL_BOX[2].1),
            0.0,
            0.0,
        );
        if hopper.start_state(&x, &plane).is_ok() {
            out.push(x);
        }
    }
    out
}

/// Result of one evaluation rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub phvs: f64,
    /// No fall or collision before the end.
    pub survived: bool,
    /// Simulated time until the end or the termination (s).
    pub duration: f64,
}

fn run(hopper: &Hopper, policy: &(impl Policy + ?Sized), start: &State, terrain: &TerrainConfig, beta: f64, steps: usize, seed: u64) -> Result<RunOutcome, SimError> {
    let traj = rollout(hopper, policy, start, terrain, steps, &(Matrix2::identity() * beta), seed)?;
    Ok(RunOutcome { phvs: phvs(&traj), survived: !traj.terminated_early(), duration: traj.steps() as f64 * traj.dt })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSweepConfig {
    pub betas: Vec<f64>,
    pub rollouts: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        NoiseSweepConfig { betas: (0..=7).map(|i| i as f64 * 0.05).collect(), rollouts: 10, steps: 100, seed: 0 }
    }
}

/// PHVS of `rollouts` runs with action noise `beta * I`.
pub fn noise_runs<P: Policy + ?Sized>(
    hopper: &Hopper,
    policy: &P,
    start: &State,
    beta: f64,
    rollouts: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    (0..rollouts)
        .map(|r| run(hopper, policy, start, &TerrainConfig::flat(), beta, steps, derive_seed(seed, r as u64, 0)).map(|o| o.phvs))
        .collect()
}

pub(crate) fn noise_cell_seed(seed: u64, start: usize, beta: usize) -> u64 {
    derive_seed(seed, 100 + start as u64, beta as u64)
}

/// One cell per `(start, beta)`; `param1` is the start index.
pub fn noise_sweep<P: Policy + Sync + ?Sized, E: Executor>(
    hopper: &Hopper,
    policy: &P,
    starts: &[State],
    config: &NoiseSweepConfig,
    scenario: &str,
    exec: &E,
) -> Result<EvalReport, SimError> {
    let jobs: Vec<(usize, usize, usize)> = (0..starts.len())
        .flat_map(|si| (0..config.betas.len()).flat_map(move |bi| (0..config.rollouts).map(move |r| (si, bi, r))))
        .collect();
    let values = exec.map(jobs, |(si, bi, r)| {
        let seed = derive_seed(noise_cell_seed(config.seed, si, bi), r as u64, 0);
        run(hopper, policy, &starts[si], &TerrainConfig::flat(), config.betas[bi], config.steps, seed).map(|o| o.phvs)
    });
    let values = values.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut report = EvalReport::new(scenario);
    let mut chunks = values.chunks(config.rollouts.max(1));
    for si in 0..starts.len() {
        for (bi, &beta) in config.betas.iter().enumerate() {
            let v = if config.rollouts == 0 { &[][..] } else { chunks.next().expect("one chunk per cell") };
            let seed0 = derive_seed(noise_cell_seed(config.seed, si, bi), 0, 0);
            report.cells.push(ReportCell::from_values(scenario, si as f64, 0.0, beta, v, seed0));
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerrainMode {
    /// Floor drops by a fraction of the leg length.
    Height,
    /// Floor tilts by an angle in degrees.
    Slope,
}

impl TerrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TerrainMode::Height => "height",
            TerrainMode::Slope => "slope",
        }
    }
}

/// Flat ground that changes once at `at_time`.
pub fn terrain_for(mode: TerrainMode, value: f64, leg_length: f64, at_time: f64) -> TerrainConfig {
    let change = match mode {
        TerrainMode::Height => TerrainChange { at_time, floor_height: -value * leg_length, floor_slope: 0.0 },
        TerrainMode::Slope => TerrainChange { at_time, floor_height: 0.0, floor_slope: value.to_radians() },
    };
    TerrainConfig { floor_height: 0.0, floor_slope: 0.0, schedule: vec![change] }
}

pub fn terrain_run<P: Policy + ?Sized>(
    hopper: &Hopper,
    policy: &P,
    start: &State,
    terrain: &TerrainConfig,
    beta: f64,
    steps: usize,
    seed: u64,
) -> Result<RunOutcome, SimError> {
    run(hopper, policy, start, terrain, beta, steps, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainSweepConfig {
    pub mode: TerrainMode,
    /// Leg-length fractions or degrees.
    pub grid: Vec<f64>,
    pub n_initial: usize,
    pub betas: Vec<f64>,
    pub change_time: f64,
    pub steps: usize,
    pub seed: u64,
}

impl TerrainSweepConfig {
    pub fn height() -> Self {
        TerrainSweepConfig {
            mode: TerrainMode::Height,
            grid: (0..=10).map(|i| i as f64 * 0.1).collect(),
            n_initial: 30,
            betas: vec![0.0],
            change_time: 0.3,
            steps: 100,
            seed: 0,
        }
    }

    pub fn slope() -> Self {
        TerrainSweepConfig { mode: TerrainMode::Slope, grid: (-4..=4).map(|i| i as f64 * 15.0).collect(), ..Self::height() }
    }

    pub fn initial_states(&self, hopper: &Hopper) -> Vec<State> {
        random_initial_states(self.n_initial, hopper, &mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 200, 0)))
    }

    pub fn run_seed(&self, grid: usize, beta: usize, start: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 201, grid as u64), beta as u64, start as u64)
    }
}

/// Per `(grid value, beta)` two cells: `scenario` holds PHVS and
/// `{scenario}_survival` the fraction of runs without a fall.
pub fn terrain_sweep<P: Policy + Sync + ?Sized, E: Executor>(
    hopper: &Hopper,
    policy: &P,
    config: &TerrainSweepConfig,
    scenario: &str,
    exec: &E,
) -> Result<EvalReport, SimError> {
    let starts = config.initial_states(hopper);
    let survival = format!("{scenario}_survival");
    let leg = hopper.params.leg_length();
    let n = starts.len();
    let jobs: Vec<(usize, usize, usize)> = (0..config.grid.len())
        .flat_map(|gi| (0..config.betas.len()).flat_map(move |bi| (0..n).map(move |si| (gi, bi, si))))
        .collect();
    let all = exec.map(jobs, |(gi, bi, si)| {
        let terrain = terrain_for(config.mode, config.grid[gi], leg, config.change_time);
        terrain_run(hopper, policy, &starts[si], &terrain, config.betas[bi], config.steps, config.run_seed(gi, bi, si))
    });
    let all = all.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut chunks = all.chunks(n.max(1));
    let mut report = EvalReport::new(scenario);
    for (gi, &value) in config.grid.iter().enumerate() {
        for (bi, &beta) in config.betas.iter().enumerate() {
            let outcomes = if n == 0 { &[][..] } else { chunks.next().expect("one chunk per cell") };
            let p: Vec<f64> = outcomes.iter().map(|o| o.phvs).collect();
            let s: Vec<f64> = outcomes.iter().map(|o| if o.survived { 1.0 } else { 0.0 }).collect();
            let seed0 = config.run_seed(gi, bi, 0);
            report.cells.push(ReportCell::from_values(scenario, value, 0.0, beta, &p, seed0));
            report.cells.push(ReportCell::from_values(&survival, value, 0.0, beta, &s, seed0));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarathonConfig {
    /// Maximum floor offsets as fractions of the leg length.
    pub heights: Vec<f64>,
    /// Maximum slopes in degrees.
    pub slopes: Vec<f64>,
    pub duration: f64,
    pub runs: usize,
    pub beta: f64,
    /// Attempts to find a new floor that the robot does not touch.
    pub max_resample: usize,
    /// Runs alternate over these start states.
    pub starts: Vec<State>,
    pub seed: u64,
}

impl Default for MarathonConfig {
    fn default() -> Self {
        MarathonConfig {
            heights: vec![0.25, 0.5, 0.75, 1.0],
            slopes: vec![15.0, 30.0, 45.0, 60.0],
            duration: 10.0,
            runs: 20,
            beta: 0.0,
            max_resample: 50,
            starts: vec![crate::x0_first(), crate::x0_second()],
            seed: 0,
        }
    }
}

impl MarathonConfig {
    pub fn run_seed(&self, height: usize, slope: usize, run: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 300, height as u64), slope as u64, run as u64)
    }
}

/// Runs until a fall, a collision or `duration`. At every apex the floor
/// height and slope are redrawn uniformly within `±max`; draws the robot
/// would touch are redrawn. Returns the termination time (s).
#[allow(clippy::too_many_arguments)]
pub fn marathon_run<P: Policy + ?Sized>(
    hopper: &Hopper,
    policy: &P,
    start: &State,
    max_height_frac: f64,
    max_slope_deg: f64,
    duration: f64,
    beta: f64,
    max_resample: usize,
    seed: u64,
) -> Result<f64, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ep = Episode::new(hopper, start, &TerrainConfig::flat())?;
    let steps = (duration / hopper.dt).round() as usize;
    let max_h = max_height_frac * hopper.params.leg_length();
    let max_s = max_slope_deg.to_radians();
    let sd = beta.sqrt();
    for t in 0..steps {
        let x = ep.observe();
        let mut u = policy.mean_action(&x, t);
        if beta > 0.0 {
            u += Action::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)) * sd;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { time: ep.state.time });
        }
        let ev = ep.step(&hopper.clamp_action(&u))?;
        if ev.collision || ep.hip_height() < hopper.fall_height {
            return Ok(ep.state.time);
        }
        if ev.apex && (max_h > 0.0 || max_s > 0.0) {
            for _ in 0..max_resample {
                let height = if max_h > 0.0 { rng.random_range(-max_h..=max_h) } else { 0.0 };
                let slope = if max_s > 0.0 { rng.random_range(-max_s..=max_s) } else { 0.0 };
                if ep.try_set_plane(Plane { height, slope }) {
                    break;
                }
            }
        }
    }
    Ok(ep.state.time.min(duration))
}

/// Termination time per `(max height, max slope)`; `param1` is the height
/// fraction, `param2` the slope in degrees.
pub fn marathon<P: Policy + Sync + ?Sized, E: Executor>(
    hopper: &Hopper,
    policy: &P,
    config: &MarathonConfig,
    scenario: &str,
    exec: &E,
) -> Result<EvalReport, SimError> {
    let runs = config.runs;
    let jobs: Vec<(usize, usize, usize)> = (0..config.heights.len())
        .flat_map(|hi| (0..config.slopes.len()).flat_map(move |si| (0..runs).map(move |r| (hi, si, r))))
        .collect();
    let all = exec.map(jobs, |(hi, si, r)| {
        let start = &config.starts[r % config.starts.len()];
        let (h, s) = (config.heights[hi], config.slopes[si]);
        marathon_run(hopper, policy, start, h, s, config.duration, config.beta, config.max_resample, config.run_seed(hi, si, r))
    });
    let all = all.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut chunks = all.chunks(runs.max(1));
    let mut report = EvalReport::new(scenario);
    for (hi, &h) in config.heights.iter().enumerate() {
        for (si, &s) in config.slopes.iter().enumerate() {
            let times = if runs == 0 { &[][..] } else { chunks.next().expect("one chunk per cell") };
            report.cells.push(ReportCell::from_values(scenario, h, s, config.beta, times, config.run_seed(hi, si, 0)));
        }
    }
    Ok(report)
}
