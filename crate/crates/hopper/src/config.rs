//! The TOML run configuration, dotted-key overrides and conversion into the
//! core configuration types.

use std::path::Path;

use hopper_core::dynamics::FitConfig;
use hopper_core::eval::{MarathonConfig, NoiseSweepConfig, SampleStudyConfig, TerrainMode, TerrainSweepConfig};
use hopper_core::ilqr::{BoxSolver, DynamicsSource, HopperCost, IlqrConfig};
use hopper_core::nn::TrainConfig;
use hopper_core::pipeline::ExperimentConfig;
use hopper_core::sim::{Hopper, RobotParams};
use hopper_core::State;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("malformed override `{0}`, expected key=value")]
    MalformedOverride(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub robot: RobotSection,
    pub sim: SimSection,
    pub experiment: ExperimentSection,
    pub ilqr: IlqrSection,
    pub fit: FitSection,
    pub cost: CostSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    pub m_hip: f64,
    pub m_upper: f64,
    pub m_shank: f64,
    pub segment_length: f64,
    pub tau_max: f64,
    pub joint_damping: f64,
    pub gravity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub substeps: usize,
    pub force_cutoff: f64,
    pub fall_height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Learned,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub starts: Vec<[f64; 7]>,
    pub iterations: usize,
    pub dynamics: DynamicsMode,
    pub steps: usize,
    pub gamma_max: f64,
    pub gamma_step: f64,
    pub rollouts_per_gamma: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSolverName {
    ProjectedNewton,
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrSection {
    pub epsilon_kl: f64,
    pub policy_sigma: f64,
    pub torque_fraction: f64,
    pub horizon_step: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_steps: usize,
    pub stability_height: f64,
    pub stability_window: usize,
    pub initial_horizon: usize,
    pub max_horizon: usize,
    pub rollouts: usize,
    pub init_fraction: f64,
    pub box_solver: BoxSolverName,
    pub offset_term: bool,
    pub value_reset: bool,
    pub max_consecutive_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub ridge_lambda: f64,
    pub gmm_k: usize,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    pub prior_pseudo_count: f64,
    pub covariance_floor: f64,
    pub history_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub jump_height: f64,
    pub contact_jump: bool,
    pub fall_margin: f64,
    pub fall_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr_torque: f64,
    pub lr_feedback: f64,
    pub n_batches: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub noise: NoiseSection,
    pub terrain: TerrainSection,
    pub marathon: MarathonSection,
    pub dyn_study: DynStudySection,
    pub introspect: IntrospectSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub betas: Vec<f64>,
    pub rollouts: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSection {
    /// Floor drops as fractions of the leg length.
    pub heights: Vec<f64>,
    /// Slopes in degrees.
    pub slopes: Vec<f64>,
    pub n_initial: usize,
    pub betas: Vec<f64>,
    pub change_time: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarathonSection {
    pub heights: Vec<f64>,
    pub slopes: Vec<f64>,
    pub duration: f64,
    pub runs: usize,
    pub beta: f64,
    pub max_resample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynStudySection {
    pub sample_counts: Vec<usize>,
    pub runs: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub reference: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntrospectSection {
    pub start: [f64; 7],
    pub drop_fraction: f64,
    pub drop_time: f64,
    pub steps: usize,
}

fn arr(x: &State) -> [f64; 7] {
    let mut a = [0.0; 7];
    a.copy_from_slice(x.as_slice());
    a
}

impl Default for RobotSection {
    fn default() -> Self {
        let p = RobotParams::default();
        RobotSection {
            m_hip: p.m_hip,
            m_upper: p.m_upper,
            m_shank: p.m_shank,
            segment_length: p.segment_length,
            tau_max: p.tau_max,
            joint_damping: p.joint_damping,
            gravity: p.gravity,
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        let h = Hopper::default();
        SimSection { dt: h.dt, substeps: h.substeps, force_cutoff: h.force_cutoff, fall_height: h.fall_height }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        ExperimentSection {
            starts: e.starts.iter().map(arr).collect(),
            iterations: e.iterations,
            dynamics: DynamicsMode::Learned,
            steps: e.steps,
            gamma_max: e.gamma_max,
            gamma_step: e.gamma_step,
            rollouts_per_gamma: e.rollouts_per_gamma,
        }
    }
}

impl Default for IlqrSection {
    fn default() -> Self {
        let c = IlqrConfig::default();
        IlqrSection {
            epsilon_kl: c.epsilon_kl,
            policy_sigma: c.policy_sigma,
            torque_fraction: c.torque_fraction,
            horizon_step: c.horizon_step,
            eta_min: c.eta_min,
            eta_max: c.eta_max,
            eta_steps: c.eta_steps,
            stability_height: c.stability_height,
            stability_window: c.stability_window,
            initial_horizon: c.initial_horizon,
            max_horizon: c.max_horizon,
            rollouts: c.rollouts,
            init_fraction: c.init_fraction,
            box_solver: match c.box_solver {
                BoxSolver::ProjectedNewton => BoxSolverName::ProjectedNewton,
                BoxSolver::Clamp => BoxSolverName::Clamp,
            },
            offset_term: c.offset_term,
            value_reset: c.value_reset,
            max_consecutive_failures: c.max_consecutive_failures,
        }
    }
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        FitSection {
            ridge_lambda: f.ridge_lambda,
            gmm_k: f.gmm_k,
            gmm_max_iters: f.gmm_max_iters,
            gmm_tol: f.gmm_tol,
            prior_pseudo_count: f.prior_pseudo_count,
            covariance_floor: f.covariance_floor,
            history_window: f.history_window,
        }
    }
}

impl Default for CostSection {
    fn default() -> Self {
        let c = HopperCost::default();
        CostSection { jump_height: c.jump_height, contact_jump: c.contact_jump, fall_margin: c.fall_margin, fall_weight: c.fall_weight }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            lr_torque: t.lr_torque,
            lr_feedback: t.lr_feedback,
            n_batches: t.n_batches,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            normalize: t.normalize,
        }
    }
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseSweepConfig::default();
        NoiseSection { betas: n.betas, rollouts: n.rollouts, steps: n.steps }
    }
}

impl Default for TerrainSection {
    fn default() -> Self {
        let h = TerrainSweepConfig::height();
        TerrainSection {
            heights: h.grid,
            slopes: TerrainSweepConfig::slope().grid,
            n_initial: h.n_initial,
            betas: h.betas,
            change_time: h.change_time,
            steps: h.steps,
        }
    }
}

impl Default for MarathonSection {
    fn default() -> Self {
        let m = MarathonConfig::default();
        MarathonSection {
            heights: m.heights,
            slopes: m.slopes,
            duration: m.duration,
            runs: m.runs,
            beta: m.beta,
            max_resample: m.max_resample,
        }
    }
}

impl Default for DynStudySection {
    fn default() -> Self {
        let s = SampleStudyConfig::default();
        DynStudySection {
            sample_counts: s.sample_counts,
            runs: s.runs,
            iterations: s.iterations,
            horizon: s.horizon,
            reference: s.reference,
        }
    }
}

impl Default for IntrospectSection {
    fn default() -> Self {
        IntrospectSection { start: arr(&hopper_core::x0_first()), drop_fraction: 1.0, drop_time: 0.3, steps: 100 }
    }
}

/// Reports the first key of `candidate` that `reference` does not have,
/// as a dotted path.
fn find_unknown(candidate: &toml::Table, reference: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in candidate {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match reference.get(k) {
            None => return Some(path),
            Some(toml::Value::Table(r)) => {
                if let toml::Value::Table(c) = v {
                    if let Some(p) = find_unknown(c, r, &path) {
                        return Some(p);
                    }
                }
            }
            Some(_) => {}
        }
    }
    None
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::MalformedOverride(key.into()))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Config {
    pub fn defaults_table() -> toml::Table {
        toml::Table::try_from(Config::default()).expect("default config serializes")
    }

    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Config, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        if let Some(k) = find_unknown(&table, &Self::defaults_table(), "") {
            return Err(ConfigError::UnknownKey(k));
        }
        let config: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io { path: p.display().to_string(), source: e })?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Switches the desk-scale run counts to the published ones.
    pub fn paper_scale(&mut self) {
        self.eval.dyn_study.runs = 500;
        self.eval.terrain.n_initial = 100;
        self.eval.marathon.runs = 50;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| Err(ConfigError::InvalidValue { key: key.into(), reason: reason.into() });
        if self.hopper().params.validate().is_err() {
            return bad("robot", "masses, lengths, torque limit and gravity must be positive");
        }
        if !(self.sim.dt > 0.0) || self.sim.substeps == 0 {
            return bad("sim.dt", "time step and substeps must be positive");
        }
        if self.experiment.starts.is_empty() {
            return bad("experiment.starts", "at least one start state is required");
        }
        if self.ilqr.initial_horizon == 0 || self.ilqr.initial_horizon > self.ilqr.max_horizon {
            return bad("ilqr.initial_horizon", "must lie in 1..=max_horizon");
        }
        if !(self.ilqr.epsilon_kl > 0.0) {
            return bad("ilqr.epsilon_kl", "must be positive");
        }
        if !(self.ilqr.eta_min > 0.0 && self.ilqr.eta_max >= self.ilqr.eta_min) || self.ilqr.eta_steps == 0 {
            return bad("ilqr.eta_min", "need 0 < eta_min <= eta_max and eta_steps >= 1");
        }
        if self.ilqr.rollouts == 0 {
            return bad("ilqr.rollouts", "must be positive");
        }
        if self.fit.ridge_lambda < 0.0 || self.fit.gmm_k == 0 {
            return bad("fit", "ridge_lambda must be non-negative and gmm_k positive");
        }
        if self.experiment.gamma_max < 0.0 || self.experiment.gamma_step < 0.0 {
            return bad("experiment.gamma_max", "noise grid must be non-negative");
        }
        if self.eval.noise.betas.iter().chain(&self.eval.terrain.betas).any(|b| *b < 0.0) || self.eval.marathon.beta < 0.0 {
            return bad("eval", "noise levels must be non-negative");
        }
        if self.train_config().validate().is_err() {
            return bad("train", "batch size, learning rates and Adam constants must be positive");
        }
        Ok(())
    }

    pub fn hopper(&self) -> Hopper {
        let r = &self.robot;
        Hopper {
            params: RobotParams {
                m_hip: r.m_hip,
                m_upper: r.m_upper,
                m_shank: r.m_shank,
                segment_length: r.segment_length,
                tau_max: r.tau_max,
                joint_damping: r.joint_damping,
                gravity: r.gravity,
            },
            dt: self.sim.dt,
            substeps: self.sim.substeps,
            force_cutoff: self.sim.force_cutoff,
            fall_height: self.sim.fall_height,
        }
    }

    pub fn ilqr_config(&self) -> IlqrConfig {
        let c = &self.ilqr;
        IlqrConfig {
            epsilon_kl: c.epsilon_kl,
            policy_sigma: c.policy_sigma,
            torque_fraction: c.torque_fraction,
            tau_max: self.robot.tau_max,
            horizon_step: c.horizon_step,
            eta_min: c.eta_min,
            eta_max: c.eta_max,
            eta_steps: c.eta_steps,
            stability_height: c.stability_height,
            stability_window: c.stability_window,
            initial_horizon: c.initial_horizon,
            max_horizon: c.max_horizon,
            rollouts: c.rollouts,
            init_fraction: c.init_fraction,
            box_solver: match c.box_solver {
                BoxSolverName::ProjectedNewton => BoxSolver::ProjectedNewton,
                BoxSolverName::Clamp => BoxSolver::Clamp,
            },
            offset_term: c.offset_term,
            value_reset: c.value_reset,
            max_consecutive_failures: c.max_consecutive_failures,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            ridge_lambda: f.ridge_lambda,
            gmm_k: f.gmm_k,
            gmm_max_iters: f.gmm_max_iters,
            gmm_tol: f.gmm_tol,
            prior_pseudo_count: f.prior_pseudo_count,
            covariance_floor: f.covariance_floor,
            history_window: f.history_window,
        }
    }

    pub fn cost(&self) -> HopperCost {
        let c = &self.cost;
        HopperCost { jump_height: c.jump_height, contact_jump: c.contact_jump, fall_margin: c.fall_margin, fall_weight: c.fall_weight }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr_torque: t.lr_torque,
            lr_feedback: t.lr_feedback,
            n_batches: t.n_batches,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            normalize: t.normalize,
            seed: self.seed,
        }
    }

    pub fn starts(&self) -> Vec<State> {
        self.experiment.starts.iter().map(|s| State::from_column_slice(s)).collect()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            starts: self.starts(),
            iterations: e.iterations,
            hopper: self.hopper(),
            ilqr: self.ilqr_config(),
            fit: self.fit_config(),
            cost: self.cost(),
            source: match e.dynamics {
                DynamicsMode::Learned => DynamicsSource::Learned,
                DynamicsMode::GroundTruth => DynamicsSource::GroundTruth,
            },
            steps: e.steps,
            gamma_max: e.gamma_max,
            gamma_step: e.gamma_step,
            rollouts_per_gamma: e.rollouts_per_gamma,
            train: self.train_config(),
            seed: self.seed,
        }
    }

    pub fn noise_sweep(&self) -> NoiseSweepConfig {
        let n = &self.eval.noise;
        NoiseSweepConfig { betas: n.betas.clone(), rollouts: n.rollouts, steps: n.steps, seed: self.seed }
    }

    pub fn terrain_sweep(&self, mode: TerrainMode) -> TerrainSweepConfig {
        let t = &self.eval.terrain;
        TerrainSweepConfig {
            mode,
            grid: match mode {
                TerrainMode::Height => t.heights.clone(),
                TerrainMode::Slope => t.slopes.clone(),
            },
            n_initial: t.n_initial,
            betas: t.betas.clone(),
            change_time: t.change_time,
            steps: t.steps,
            seed: self.seed,
        }
    }

    pub fn marathon(&self) -> MarathonConfig {
        let m = &self.eval.marathon;
        MarathonConfig {
            heights: m.heights.clone(),
            slopes: m.slopes.clone(),
            duration: m.duration,
            runs: m.runs,
            beta: m.beta,
            max_resample: m.max_resample,
            starts: self.starts(),
            seed: self.seed,
        }
    }

    pub fn sample_study(&self) -> SampleStudyConfig {
        let d = &self.eval.dyn_study;
        SampleStudyConfig {
            sample_counts: d.sample_counts.clone(),
            runs: d.runs,
            iterations: d.iterations,
            horizon: d.horizon,
            start: self.starts()[0],
            reference: d.reference,
            hopper: self.hopper(),
            ilqr: self.ilqr_config(),
            fit: self.fit_config(),
            cost: self.cost(),
            seed: self.seed,
        }
    }
}
