//! Command-line entry points.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hopper_core::eval::{self, TerrainMode};
use hopper_core::ilqr::LinearGaussianPolicy;
use hopper_core::nn::{DistillationDataset, NetKind, NetPolicy};
use hopper_core::pipeline::{self, LocalPolicyRun};
use hopper_core::sim::{rollout, TerrainConfig};
use hopper_core::State;

use crate::config::{Config, ConfigError};
use crate::formats::{self, AnyPolicy, DynamicsDoc, ModelDoc, PolicyDoc};
use crate::manifest::Manifest;
use crate::parallel::ThreadPool;

#[derive(Parser, Debug)]
#[command(name = "hopper", version, about = "Learn and evaluate reactive hopping policies")]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Write the manifest and the planned stages without running them.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Use the full-size run counts instead of the desk-scale ones.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Configuration override, `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Height,
    Slope,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Torque,
    Feedback,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimize local iLQR policies from the configured start states.
    Optimize {
        /// Only this start (1-based).
        #[arg(long)]
        start: Option<usize>,
    },
    /// Build the distillation dataset from stored local policies.
    Dataset {
        /// Policy files, one per start; defaults to policy_N.json in the output directory.
        #[arg(long, num_args = 1..)]
        policies: Vec<PathBuf>,
    },
    /// Train the networks on a stored dataset.
    Distill {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
    },
    /// PHVS under increasing action noise.
    EvalNoise {
        /// Policy or network file.
        policy: PathBuf,
    },
    /// PHVS and survival after a floor change.
    EvalTerrain {
        policy: PathBuf,
        #[arg(long, value_enum, default_value = "height")]
        mode: ModeArg,
    },
    /// Termination times on randomly changing ground.
    Marathon { policy: PathBuf },
    /// PHVS against the number of sampled rollouts per iteration.
    DynStudy,
    /// Feedback-network outputs on the floor-drop scenario.
    Introspect { model: PathBuf },
    /// Roll out a policy and write the trajectory.
    Replay {
        policy: PathBuf,
        /// Start state index (1-based) from the configuration.
        #[arg(long)]
        start: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Floor drop at 0.3 s as a fraction of the leg length.
        #[arg(long)]
        drop: Option<f64>,
        /// Trajectory CSV path; defaults to trajectory.csv in the output directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Optimize, build the dataset and distill.
    RunFull,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Optimize { .. } => "optimize",
            Command::Dataset { .. } => "dataset",
            Command::Distill { .. } => "distill",
            Command::EvalNoise { .. } => "eval-noise",
            Command::EvalTerrain { .. } => "eval-terrain",
            Command::Marathon { .. } => "marathon",
            Command::DynStudy => "dyn-study",
            Command::Introspect { .. } => "introspect",
            Command::Replay { .. } => "replay",
            Command::RunFull => "run-full",
        }
    }

    fn stages(&self) -> Vec<&'static str> {
        match self {
            Command::RunFull => vec!["optimize", "dataset", "distill"],
            other => vec![other.name()],
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Dataset { policies } => policies.iter().map(|p| p.as_path()).collect(),
            Command::Distill { dataset: Some(d), .. } => vec![d.as_path()],
            Command::EvalNoise { policy } | Command::EvalTerrain { policy, .. } | Command::Marathon { policy } => {
                vec![policy.as_path()]
            }
            Command::Introspect { model } => vec![model.as_path()],
            Command::Replay { policy, .. } => vec![policy.as_path()],
            _ => Vec::new(),
        }
    }
}

/// Exit status: 0 success, 1 stage failure, 2 configuration error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    ExitCode::from(run_command(&cli))
}

pub fn resolve_config(cli: &Cli) -> Result<Config, ConfigError> {
    let mut config = Config::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.paper_scale {
        config.paper_scale();
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn manifest_path(cli: &Cli) -> PathBuf {
    match cli.command {
        Command::RunFull => cli.out.join("manifest.json"),
        _ => cli.out.join(format!("{}.manifest.json", cli.command.name())),
    }
}

pub fn run_command(cli: &Cli) -> u8 {
    let config = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(missing) = cli.command.inputs().into_iter().find(|p| !p.exists()) {
        eprintln!("error: input file {} does not exist", missing.display());
        return 2;
    }
    if let Err(e) = std::fs::create_dir_all(cli.out.join("reports")) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return 1;
    }
    let mut manifest = Manifest::new(cli.command.name(), &config, cli.paper_scale, &cli.command.stages());
    if cli.dry_run {
        return match manifest.write(&manifest_path(cli)) {
            Ok(()) => {
                for s in &manifest.stages {
                    println!("{}", s.name);
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                1
            }
        };
    }
    let result = ThreadPool::new(cli.threads).and_then(|pool| execute(cli, &config, &pool, &mut manifest));
    let code = match &result {
        Ok(()) => {
            manifest.status = "ok".into();
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            manifest.status = "failed".into();
            manifest.error = Some(format!("{e:#}"));
            1
        }
    };
    if let Err(e) = manifest.write(&manifest_path(cli)) {
        eprintln!("error: cannot write manifest: {e:#}");
        return 1;
    }
    code
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into())
}

fn start_index(start: Option<usize>, n: usize) -> Result<usize> {
    match start {
        None => Ok(0),
        Some(s) if (1..=n).contains(&s) => Ok(s - 1),
        Some(s) => Err(anyhow!("start {s} is out of range 1..={n}")),
    }
}

/// Runs `name`, recording its status in the manifest.
fn stage<T>(manifest: &mut Manifest, name: &str, f: impl FnOnce(&mut Manifest) -> Result<T>) -> Result<T> {
    manifest.set_stage(name, "running");
    let t0 = std::time::Instant::now();
    let r = f(manifest).with_context(|| format!("stage `{name}` failed"));
    manifest.set_stage(name, if r.is_ok() { "ok" } else { "failed" });
    log::info!("{name}: {:.1} s", t0.elapsed().as_secs_f64());
    r
}

fn save_runs(out: &Path, runs: &[(usize, LocalPolicyRun)], manifest: &mut Manifest) -> Result<()> {
    for (i, run) in runs {
        let n = i + 1;
        let rel = format!("policy_{n}.json");
        formats::write_json(&out.join(&rel), &PolicyDoc::from_policy(&run.policy, Some(&run.start)))?;
        manifest.add_artifact(out, &rel)?;
        if let Some(d) = &run.dynamics {
            let rel = format!("dynamics_{n}.json");
            formats::write_json(&out.join(&rel), &DynamicsDoc::from_dynamics(d))?;
            manifest.add_artifact(out, &rel)?;
        }
        let rel = format!("reports/iterations_{n}.csv");
        formats::write_iterations(create(&out.join(&rel))?, &run.reports)?;
        manifest.add_artifact(out, &rel)?;
        if let Some(last) = run.reports.iter().rev().find(|r| r.accepted) {
            log::info!("policy {n}: T = {}, PHVS = {:.4}, fell = {}", last.horizon, last.phvs, last.fell);
        }
    }
    Ok(())
}

fn save_dataset(out: &Path, ds: &DistillationDataset, config: &Config, manifest: &mut Manifest) -> Result<()> {
    formats::write_dataset(create(&out.join("dataset.csv"))?, ds)?;
    manifest.add_artifact(out, "dataset.csv")?;
    let exp = config.experiment();
    manifest.counts.insert("dataset_records".into(), ds.len() as u64);
    manifest.counts.insert("sweep_episodes".into(), ds.episodes() as u64);
    manifest.counts.insert("optimization_episodes_per_policy".into(), exp.optimization_episodes() as u64);
    Ok(())
}

fn distill(out: &Path, ds: &DistillationDataset, kinds: &[NetKind], config: &Config, pool: &ThreadPool, manifest: &mut Manifest) -> Result<()> {
    use hopper_core::exec::Executor;
    let exp = config.experiment();
    let trained = pool.map(kinds.to_vec(), |k| pipeline::train_network(ds, k, &exp));
    for (kind, net) in kinds.iter().zip(trained) {
        let net = net?;
        let name = format!("{}_net.json", kind.label());
        let tc = hopper_core::nn::TrainConfig {
            seed: hopper_core::ilqr::derive_seed(exp.seed, 4 + *kind as u64, exp.train.seed),
            ..exp.train.clone()
        };
        formats::write_json(&out.join(&name), &ModelDoc::from_net(&net.net, Some(&tc), net.losses.last().copied()))?;
        manifest.add_artifact(out, &name)?;
        let rel = format!("reports/loss_{}.csv", kind.label());
        formats::write_losses(create(&out.join(&rel))?, &net.losses)?;
        manifest.add_artifact(out, &rel)?;
        log::info!("{} net: final batch loss {:.5}", kind.label(), net.losses.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

fn load_policies(paths: &[PathBuf], out: &Path, n: usize) -> Result<Vec<LinearGaussianPolicy>> {
    let paths: Vec<PathBuf> = if paths.is_empty() { (1..=n).map(|i| out.join(format!("policy_{i}.json"))).collect() } else { paths.to_vec() };
    paths
        .iter()
        .map(|p| {
            let doc: PolicyDoc = formats::read_json(p)?;
            doc.to_policy().with_context(|| format!("in {}", p.display()))
        })
        .collect()
}

fn execute(cli: &Cli, config: &Config, pool: &ThreadPool, manifest: &mut Manifest) -> Result<()> {
    use hopper_core::exec::Executor;
    let out = cli.out.as_path();
    let hopper = config.hopper();
    let exp = config.experiment();
    match &cli.command {
        Command::Optimize { start } => stage(manifest, "optimize", |m| {
            let idx: Vec<usize> = match start {
                Some(_) => vec![start_index(*start, exp.starts.len())?],
                None => (0..exp.starts.len()).collect(),
            };
            let runs = pool.map(idx.clone(), |i| pipeline::optimize_local_policy(&exp.starts[i], i, &exp));
            let runs: Vec<(usize, LocalPolicyRun)> =
                idx.into_iter().zip(runs).map(|(i, r)| r.map(|r| (i, r))).collect::<Result<_, _>>()?;
            save_runs(out, &runs, m)
        }),
        Command::Dataset { policies } => stage(manifest, "dataset", |m| {
            let loaded = load_policies(policies, out, exp.starts.len())?;
            let starts: Vec<State> = exp.starts.iter().copied().take(loaded.len()).collect();
            if starts.len() != loaded.len() {
                return Err(anyhow!("{} policies but only {} start states", loaded.len(), starts.len()));
            }
            let ds = pipeline::generate_dataset(&loaded, &starts, &exp, pool)?;
            save_dataset(out, &ds, config, m)
        }),
        Command::Distill { dataset, kind } => stage(manifest, "distill", |m| {
            let path = dataset.clone().unwrap_or_else(|| out.join("dataset.csv"));
            let ds = formats::read_dataset(File::open(&path).with_context(|| format!("cannot open {}", path.display()))?)?;
            let kinds = match kind {
                KindArg::Torque => vec![NetKind::Torque],
                KindArg::Feedback => vec![NetKind::Feedback],
                KindArg::Both => vec![NetKind::Torque, NetKind::Feedback],
            };
            distill(out, &ds, &kinds, config, pool, m)
        }),
        Command::EvalNoise { policy } => stage(manifest, "eval-noise", |m| {
            let p = AnyPolicy::load(policy)?;
            let name = format!("noise_{}", stem(policy));
            let report = eval::noise_sweep(&hopper, &p, &exp.starts, &config.noise_sweep(), &name, pool)?;
            let rel = format!("reports/{name}.csv");
            formats::write_report(create(&out.join(&rel))?, &report)?;
            m.add_artifact(out, &rel)
        }),
        Command::EvalTerrain { policy, mode } => stage(manifest, "eval-terrain", |m| {
            let p = AnyPolicy::load(policy)?;
            let mode = match mode {
                ModeArg::Height => TerrainMode::Height,
                ModeArg::Slope => TerrainMode::Slope,
            };
            let name = format!("terrain_{}_{}", mode.label(), stem(policy));
            let report = eval::terrain_sweep(&hopper, &p, &config.terrain_sweep(mode), &name, pool)?;
            let rel = format!("reports/{name}.csv");
            formats::write_report(create(&out.join(&rel))?, &report)?;
            m.add_artifact(out, &rel)
        }),
        Command::Marathon { policy } => stage(manifest, "marathon", |m| {
            let p = AnyPolicy::load(policy)?;
            let name = format!("marathon_{}", stem(policy));
            let report = eval::marathon(&hopper, &p, &config.marathon(), &name, pool)?;
            let rel = format!("reports/{name}.csv");
            formats::write_report(create(&out.join(&rel))?, &report)?;
            m.add_artifact(out, &rel)
        }),
        Command::DynStudy => stage(manifest, "dyn-study", |m| {
            let (report, runs) = eval::dynamics_sample_study(&config.sample_study(), pool)?;
            formats::write_report(create(&out.join("reports/dyn_study.csv"))?, &report)?;
            m.add_artifact(out, "reports/dyn_study.csv")?;
            let max_kl = runs.iter().flat_map(|r| r.accepted_kl.iter().copied()).fold(0.0, f64::max);
            log::info!("largest accepted mean KL: {max_kl:.4}");
            Ok(())
        }),
        Command::Introspect { model } => stage(manifest, "introspect", |m| {
            let net = match AnyPolicy::load(model)? {
                AnyPolicy::Net(NetPolicy::Feedback(n)) => n,
                _ => return Err(anyhow!("introspection needs a feedback network")),
            };
            let ic = &config.eval.introspect;
            let terrain = TerrainConfig::with_drop(ic.drop_fraction * hopper.params.leg_length(), ic.drop_time);
            let trace = eval::introspect(&hopper, &net, &State::from_column_slice(&ic.start), &terrain, ic.steps)?;
            formats::write_introspection(create(&out.join("reports/introspect.csv"))?, &trace)?;
            m.add_artifact(out, "reports/introspect.csv")?;
            let (hip, knee) = eval::flight_gain_ratio(&trace);
            log::info!("impact / flight gain ratio: hip {hip:.3}, knee {knee:.3}");
            Ok(())
        }),
        Command::Replay { policy, start, beta, steps, drop, csv } => stage(manifest, "replay", |m| {
            let p = AnyPolicy::load(policy)?;
            let x0 = match (start, p.start()) {
                (Some(_), _) | (None, None) => exp.starts[start_index(*start, exp.starts.len())?],
                (None, Some(s)) => s,
            };
            let terrain = match drop {
                Some(d) => TerrainConfig::with_drop(d * hopper.params.leg_length(), 0.3),
                None => TerrainConfig::flat(),
            };
            let traj = rollout(&hopper, &p, &x0, &terrain, *steps, &formats::isotropic(*beta), config.seed)?;
            let path = csv.clone().unwrap_or_else(|| out.join("trajectory.csv"));
            formats::write_trajectory(create(&path)?, &traj)?;
            log::info!("{} steps, PHVS {:.4}, {} flight phases", traj.steps(), eval::phvs(&traj), traj.flight_phases());
            if path.starts_with(out) {
                m.add_artifact(out, &path.strip_prefix(out)?.to_string_lossy())?;
            }
            Ok(())
        }),
        Command::RunFull => {
            exp.validate()?;
            let runs = stage(manifest, "optimize", |m| {
                let runs = pipeline::optimize_all(&exp, pool)?;
                let runs: Vec<(usize, LocalPolicyRun)> = runs.into_iter().enumerate().collect();
                save_runs(out, &runs, m)?;
                Ok(runs)
            })?;
            let ds = stage(manifest, "dataset", |m| {
                let policies: Vec<LinearGaussianPolicy> = runs.iter().map(|(_, r)| r.policy.clone()).collect();
                let ds = pipeline::generate_dataset(&policies, &exp.starts, &exp, pool)?;
                save_dataset(out, &ds, config, m)?;
                Ok(ds)
            })?;
            stage(manifest, "distill", |m| distill(out, &ds, &[NetKind::Torque, NetKind::Feedback], config, pool, m))
        }
    }
}
