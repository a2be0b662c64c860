//! JSON documents for policies, dynamics and networks, and the CSV tables.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use hopper_core::dynamics::LinearGaussianDynamics;
use hopper_core::eval::{EvalReport, IntrospectionStep, ReportCell};
use hopper_core::ilqr::{IterationReport, LinearGaussianPolicy};
use hopper_core::nn::{DistillationDataset, DistillationRecord, Mlp, NetKind, NetPolicy, Normalizer, TrainConfig};
use hopper_core::sim::{Policy, Trajectory};
use hopper_core::{Action, Gain, State};
use nalgebra::{Matrix2, SMatrix};
use serde::{Deserialize, Serialize};

fn rows<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> Vec<Vec<f64>> {
    (0..R).map(|r| (0..C).map(|c| m[(r, c)]).collect()).collect()
}

fn from_rows<const R: usize, const C: usize>(v: &[Vec<f64>], what: &str) -> Result<SMatrix<f64, R, C>> {
    if v.len() != R || v.iter().any(|r| r.len() != C) {
        bail!("{what}: expected a {R}x{C} matrix");
    }
    Ok(SMatrix::from_fn(|r, c| v[r][c]))
}

fn vector<const N: usize>(v: &[f64], what: &str) -> Result<nalgebra::SVector<f64, N>> {
    if v.len() != N {
        bail!("{what}: expected {N} values, got {}", v.len());
    }
    Ok(nalgebra::SVector::from_column_slice(v))
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyStepDoc {
    pub k: Vec<f64>,
    pub gain: Vec<Vec<f64>>,
    pub x_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

/// A time-varying linear-Gaussian controller.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub kind: String,
    pub horizon: usize,
    pub start: Option<Vec<f64>>,
    pub steps: Vec<PolicyStepDoc>,
}

pub const LINEAR_GAUSSIAN: &str = "linear_gaussian";

impl PolicyDoc {
    pub fn from_policy(p: &LinearGaussianPolicy, start: Option<&State>) -> Self {
        PolicyDoc {
            kind: LINEAR_GAUSSIAN.into(),
            horizon: p.horizon,
            start: start.map(|s| s.as_slice().to_vec()),
            steps: (0..p.len())
                .map(|t| PolicyStepDoc {
                    k: p.k[t].as_slice().to_vec(),
                    gain: rows(&p.gains[t]),
                    x_hat: p.x_hat[t].as_slice().to_vec(),
                    u_hat: p.u_hat[t].as_slice().to_vec(),
                    sigma: rows(&p.sigma[t]),
                })
                .collect(),
        }
    }

    pub fn to_policy(&self) -> Result<LinearGaussianPolicy> {
        if self.kind != LINEAR_GAUSSIAN {
            bail!("not a linear-Gaussian policy (kind `{}`)", self.kind);
        }
        if self.steps.is_empty() {
            bail!("policy has no steps");
        }
        let mut p = LinearGaussianPolicy {
            k: Vec::new(),
            gains: Vec::new(),
            x_hat: Vec::new(),
            u_hat: Vec::new(),
            sigma: Vec::new(),
            horizon: self.horizon,
        };
        for (t, s) in self.steps.iter().enumerate() {
            p.k.push(vector::<2>(&s.k, &format!("step {t} k"))?);
            p.gains.push(from_rows::<2, 7>(&s.gain, &format!("step {t} gain"))?);
            p.x_hat.push(vector::<7>(&s.x_hat, &format!("step {t} x_hat"))?);
            p.u_hat.push(vector::<2>(&s.u_hat, &format!("step {t} u_hat"))?);
            p.sigma.push(from_rows::<2, 2>(&s.sigma, &format!("step {t} sigma"))?);
        }
        Ok(p)
    }

    pub fn start_state(&self) -> Option<State> {
        self.start.as_ref().filter(|s| s.len() == 7).map(|s| State::from_column_slice(s))
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsStepDoc {
    pub f_xu: Vec<Vec<f64>>,
    pub f_c: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub samples: usize,
    /// `None` when the fit reported an infinite condition number.
    pub condition: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsDoc {
    pub steps: Vec<DynamicsStepDoc>,
}

impl DynamicsDoc {
    pub fn from_dynamics(d: &LinearGaussianDynamics) -> Self {
        DynamicsDoc {
            steps: (0..d.horizon())
                .map(|t| DynamicsStepDoc {
                    f_xu: rows(&d.f_xu[t]),
                    f_c: d.f_c[t].as_slice().to_vec(),
                    cov: rows(&d.cov[t]),
                    samples: d.sample_counts.get(t).copied().unwrap_or(0),
                    condition: d.condition.get(t).copied().filter(|c| c.is_finite()),
                })
                .collect(),
        }
    }

    pub fn to_dynamics(&self) -> Result<LinearGaussianDynamics> {
        let mut d = LinearGaussianDynamics {
            f_xu: Vec::new(),
            f_c: Vec::new(),
            cov: Vec::new(),
            sample_counts: Vec::new(),
            condition: Vec::new(),
        };
        for (t, s) in self.steps.iter().enumerate() {
            d.f_xu.push(from_rows::<7, 9>(&s.f_xu, &format!("step {t} f_xu"))?);
            d.f_c.push(vector::<7>(&s.f_c, &format!("step {t} f_c"))?);
            d.cov.push(from_rows::<7, 7>(&s.cov, &format!("step {t} cov"))?);
            d.sample_counts.push(s.samples);
            d.condition.push(s.condition.unwrap_or(f64::INFINITY));
        }
        Ok(d)
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NormalizationDoc {
    pub enabled: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainEcho {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_batches: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

/// A distilled network.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub layers: Vec<LayerDoc>,
    pub normalization: NormalizationDoc,
    pub train: Option<TrainEcho>,
    pub final_loss: Option<f64>,
}

impl ModelDoc {
    pub fn from_net(net: &NetPolicy, train: Option<&TrainConfig>, final_loss: Option<f64>) -> Self {
        let mlp = net.mlp();
        let norm = net.normalizer();
        ModelDoc {
            kind: net.kind().label().into(),
            layer_sizes: mlp.sizes.clone(),
            activation: "elu".into(),
            layers: (0..mlp.layers())
                .map(|l| LayerDoc {
                    rows: mlp.sizes[l + 1],
                    cols: mlp.sizes[l],
                    weights: mlp.weights(l).to_vec(),
                    biases: mlp.biases(l).to_vec(),
                })
                .collect(),
            normalization: NormalizationDoc {
                enabled: train.map(|t| t.normalize).unwrap_or(*norm != Normalizer::default()),
                mean: norm.mean.as_slice().to_vec(),
                std: norm.std.as_slice().to_vec(),
            },
            train: train.map(|t| TrainEcho {
                batch_size: t.batch_size,
                learning_rate: t.learning_rate(net.kind()),
                n_batches: t.n_batches,
                beta1: t.beta1,
                beta2: t.beta2,
                adam_eps: t.adam_eps,
                seed: t.seed,
            }),
            final_loss: final_loss.filter(|l| l.is_finite()),
        }
    }

    pub fn to_net(&self) -> Result<NetPolicy> {
        let kind = NetKind::from_label(&self.kind).with_context(|| format!("unknown network kind `{}`", self.kind))?;
        if self.layers.len() + 1 != self.layer_sizes.len() {
            bail!("layer count does not match layer_sizes");
        }
        let mut params = Vec::with_capacity(Mlp::param_count(&self.layer_sizes));
        for (l, layer) in self.layers.iter().enumerate() {
            let (r, c) = (self.layer_sizes[l + 1], self.layer_sizes[l]);
            if layer.rows != r || layer.cols != c || layer.weights.len() != r * c || layer.biases.len() != r {
                bail!("layer {l} does not have shape {r}x{c}");
            }
            params.extend_from_slice(&layer.weights);
            params.extend_from_slice(&layer.biases);
        }
        if params.iter().any(|p| !p.is_finite()) {
            bail!("non-finite network parameter");
        }
        let normalizer = if self.normalization.enabled || !self.normalization.mean.is_empty() {
            Normalizer {
                mean: vector::<7>(&self.normalization.mean, "normalization mean")?,
                std: vector::<7>(&self.normalization.std, "normalization std")?,
            }
        } else {
            Normalizer::default()
        };
        let mlp = Mlp { sizes: self.layer_sizes.clone(), params };
        NetPolicy::from_parts(kind, mlp, normalizer).map_err(|e| anyhow::anyhow!("{e}"))
    }
}

/// Any controller that can be loaded from disk.
#[derive(Clone, Debug)]
pub enum AnyPolicy {
    Local { policy: LinearGaussianPolicy, start: Option<State> },
    Net(NetPolicy),
}

impl AnyPolicy {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).context("policy file is not valid JSON")?;
        let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
        if kind == LINEAR_GAUSSIAN {
            let doc: PolicyDoc = serde_json::from_value(v)?;
            Ok(AnyPolicy::Local { policy: doc.to_policy()?, start: doc.start_state() })
        } else if NetKind::from_label(&kind).is_some() {
            let doc: ModelDoc = serde_json::from_value(v)?;
            Ok(AnyPolicy::Net(doc.to_net()?))
        } else {
            bail!("unknown policy kind `{kind}`")
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn start(&self) -> Option<State> {
        match self {
            AnyPolicy::Local { start, .. } => *start,
            AnyPolicy::Net(_) => None,
        }
    }
}

impl Policy for AnyPolicy {
    fn mean_action(&self, x: &State, t: usize) -> Action {
        match self {
            AnyPolicy::Local { policy, .. } => policy.mean_at(x, t),
            AnyPolicy::Net(n) => n.mean(x),
        }
    }
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn dataset_header() -> Vec<String> {
    let mut h: Vec<String> = ["policy", "gamma", "episode", "t"].iter().map(|s| s.to_string()).collect();
    h.extend((0..7).map(|i| format!("x{i}")));
    h.extend((0..2).map(|i| format!("g{i}")));
    h.extend((0..2).map(|i| format!("k{i}")));
    for r in 0..2 {
        h.extend((0..7).map(move |c| format!("K{r}{c}")));
    }
    h.extend((0..7).map(|i| format!("xhat{i}")));
    h
}

pub fn write_dataset<W: Write>(w: W, ds: &DistillationDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(dataset_header())?;
    for r in &ds.records {
        let mut row = vec![r.policy.to_string(), f(r.gamma), r.episode.to_string(), r.t.to_string()];
        row.extend(r.x.iter().map(|v| f(*v)));
        row.extend(r.g.iter().map(|v| f(*v)));
        row.extend(r.k.iter().map(|v| f(*v)));
        for i in 0..2 {
            row.extend((0..7).map(|c| f(r.gain[(i, c)])));
        }
        row.extend(r.x_hat.iter().map(|v| f(*v)));
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<DistillationDataset> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != dataset_header() {
        bail!("unexpected dataset header");
    }
    let mut records = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().with_context(|| format!("record {line}, column {}", header[i]))
        };
        let int = |i: usize| -> Result<usize> {
            row[i].parse::<usize>().with_context(|| format!("record {line}, column {}", header[i]))
        };
        let v: Vec<f64> = (4..header.len()).map(num).collect::<Result<_>>()?;
        let x = State::from_column_slice(&v[0..7]);
        let g = Action::from_column_slice(&v[7..9]);
        let k = Action::from_column_slice(&v[9..11]);
        let gain = Gain::from_row_slice(&v[11..25]);
        let x_hat = State::from_column_slice(&v[25..32]);
        records.push(DistillationRecord { x, g, k, gain, x_hat, policy: int(0)?, gamma: num(1)?, episode: int(2)?, t: int(3)? });
    }
    Ok(DistillationDataset { records })
}

pub const TRAJECTORY_HEADER: [&str; 12] =
    ["t", "h", "hdot", "phi_h", "phidot_h", "phi_k", "phidot_k", "c", "u_h", "u_k", "cost", "event"];

/// One row per visited state; the final state has empty action and cost.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER)?;
    for (i, x) in traj.states.iter().enumerate() {
        let mut row = vec![f(i as f64 * traj.dt)];
        row.extend(x.iter().map(|v| f(*v)));
        if i < traj.steps() {
            row.push(f(traj.actions[i][0]));
            row.push(f(traj.actions[i][1]));
            row.push(f(traj.costs[i]));
            row.push(traj.events[i].label().into());
        } else {
            row.extend(["".into(), "".into(), "".into()]);
            row.push(match traj.termination {
                Some(hopper_core::sim::Termination::Fall { .. }) => "fall".into(),
                Some(hopper_core::sim::Termination::Collision { .. }) => "collision".into(),
                None => "end".into(),
            });
        }
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_iterations<W: Write>(w: W, reports: &[IterationReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "T", "eta", "mean_kl", "mean_cost", "phvs", "fell"])?;
    for r in reports {
        out.write_record([
            r.iter.to_string(),
            r.horizon.to_string(),
            f(r.eta),
            f(r.mean_kl),
            f(r.mean_cost),
            f(r.phvs),
            (r.fell as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub const REPORT_HEADER: [&str; 8] = ["scenario", "param1", "param2", "beta", "mean", "std", "n", "seed0"];

pub fn write_report<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for c in &report.cells {
        out.write_record([
            c.scenario.clone(),
            f(c.param1),
            f(c.param2),
            f(c.beta),
            f(c.mean),
            f(c.std),
            c.n.to_string(),
            c.seed0.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(r: R) -> Result<EvalReport> {
    let mut rd = csv::Reader::from_reader(r);
    let mut report = EvalReport::default();
    for row in rd.records() {
        let row = row?;
        if row.len() != REPORT_HEADER.len() {
            bail!("report row has {} fields", row.len());
        }
        let cell = ReportCell {
            scenario: row[0].to_string(),
            param1: row[1].parse()?,
            param2: row[2].parse()?,
            beta: row[3].parse()?,
            mean: row[4].parse()?,
            std: row[5].parse()?,
            n: row[6].parse()?,
            seed0: row[7].parse()?,
        };
        if report.scenario.is_empty() {
            report.scenario = cell.scenario.clone();
        }
        report.cells.push(cell);
    }
    Ok(report)
}

pub fn write_losses<W: Write>(w: W, losses: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["batch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        out.write_record([i.to_string(), f(*l)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_introspection<W: Write>(w: W, trace: &[IntrospectionStep]) -> Result<()> {
    use hopper_core::idx;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t", "h", "phi_h", "phi_k", "c", "xhat_phi_h", "xhat_phi_k", "k_hip", "k_knee", "k_h", "k_k", "u_h", "u_k", "event",
    ])?;
    for s in trace {
        out.write_record([
            f(s.time),
            f(s.x[idx::H]),
            f(s.x[idx::PHI_H]),
            f(s.x[idx::PHI_K]),
            f(s.x[idx::CONTACT]),
            f(s.x_hat[idx::PHI_H]),
            f(s.x_hat[idx::PHI_K]),
            f(s.hip_gain()),
            f(s.knee_gain()),
            f(s.k[0]),
            f(s.k[1]),
            f(s.u[0]),
            f(s.u[1]),
            s.events.label().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// The isotropic covariance `beta * I`.
pub fn isotropic(beta: f64) -> Matrix2<f64> {
    Matrix2::identity() * beta
}
