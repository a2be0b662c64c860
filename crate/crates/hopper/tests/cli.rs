use std::fs::{self, File};
use std::path::Path;

use clap::Parser;
use hopper::cli::{run_command, Cli};
use hopper::formats::{self, AnyPolicy, DynamicsDoc, ModelDoc, PolicyDoc};
use hopper::manifest::Manifest;
use hopper::{Config, ConfigError};
use hopper_core::ilqr::LinearGaussianPolicy;
use hopper_core::nn::{DistillationDataset, NetKind, NetPolicy};
use hopper_core::x0_first;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

const SMALL: &[&str] = &[
    "--set",
    "experiment.iterations=3",
    "--set",
    "experiment.gamma_max=0.02",
    "--set",
    "experiment.rollouts_per_gamma=1",
    "--set",
    "train.n_batches=40",
    "--set",
    "train.batch_size=32",
];

fn run(out: &Path, args: &[&str]) -> u8 {
    let mut argv = vec!["hopper", "--out", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    run_command(&Cli::try_parse_from(argv).unwrap())
}

fn small(args: &[&str]) -> Vec<&'static str> {
    let mut v: Vec<&'static str> = SMALL.to_vec();
    v.extend(args.iter().map(|s| -> &'static str { Box::leak(s.to_string().into_boxed_str()) }));
    v
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_config_round_trips_through_toml() {
    let c = Config::default();
    let text = c.to_toml();
    let back = Config::from_toml_with_overrides(&text, &[]).unwrap();
    assert_eq!(c, back);
}

#[test]
fn overrides_apply_to_nested_keys() {
    let c = Config::from_toml_with_overrides("", &["ilqr.epsilon_kl=0.25".into(), "experiment.dynamics=ground_truth".into()])
        .unwrap();
    assert_eq!(c.ilqr.epsilon_kl, 0.25);
    assert_eq!(c.ilqr_config().epsilon_kl, 0.25);
}

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let err = Config::from_toml_with_overrides("[ilqr]\nepsilon = 0.5\n", &[]).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "ilqr.epsilon"), "{err}");
    let err = Config::from_toml_with_overrides("", &["train.speed=3".into()]).unwrap_err();
    assert!(err.to_string().contains("train.speed"));
}

#[test]
fn unknown_key_exits_with_config_status() {
    let dir = tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--set", "fit.nope=1", "optimize"]), 2);
    assert!(!dir.path().join("optimize.manifest.json").exists());
}

#[test]
fn missing_input_exits_with_config_status() {
    let dir = tempdir().unwrap();
    assert_eq!(run(dir.path(), &["replay", "/nonexistent/policy.json"]), 2);
}

#[test]
fn invalid_value_is_rejected() {
    assert!(Config::from_toml_with_overrides("", &["ilqr.epsilon_kl=-1".into()]).is_err());
    assert!(Config::from_toml_with_overrides("", &["train.batch_size=0".into()]).is_err());
}

#[test]
fn dry_run_writes_only_the_manifest() {
    let dir = tempdir().unwrap();
    assert_eq!(run(dir.path(), &["run-full", "--dry-run"]), 0);
    let m = manifest(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "planned");
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(stages, ["optimize", "dataset", "distill"]);
    assert!(!dir.path().join("policy_1.json").exists());
    assert!(m["config"]["ilqr"]["epsilon_kl"].is_number());
}

#[test]
fn paper_scale_changes_run_counts() {
    let dir = tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--paper-scale", "dyn-study", "--dry-run"]), 0);
    let m = manifest(&dir.path().join("dyn-study.manifest.json"));
    assert_eq!(m["paper_scale"], true);
    assert_eq!(m["config"]["eval"]["dyn_study"]["runs"], 500);
}

#[test]
fn policy_json_round_trip_is_exact() {
    let p = LinearGaussianPolicy::random(&x0_first(), 12, 12, 0.5, 0.1, 7);
    let doc = PolicyDoc::from_policy(&p, Some(&x0_first()));
    let text = serde_json::to_string(&doc).unwrap();
    let back: PolicyDoc = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_policy().unwrap(), p);
    assert_eq!(back.start_state(), Some(x0_first()));
    assert!(matches!(AnyPolicy::from_json(&text).unwrap(), AnyPolicy::Local { .. }));
}

#[test]
fn model_json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in [NetKind::Torque, NetKind::Feedback] {
        let net = NetPolicy::new(kind, &mut rng);
        let doc = ModelDoc::from_net(&net, None, None);
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back: ModelDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_net().unwrap(), net);
        assert_eq!(doc.layer_sizes, kind.layer_sizes());
        match AnyPolicy::from_json(&text).unwrap() {
            AnyPolicy::Net(n) => assert_eq!(n, net),
            _ => panic!("expected a network"),
        }
    }
}

#[test]
fn corrupt_model_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut doc = ModelDoc::from_net(&NetPolicy::new(NetKind::Torque, &mut rng), None, None);
    doc.layers[1].weights.pop();
    assert!(doc.to_net().is_err());
}

/// Runs the small pipeline once and checks every stage artifact against its reader.
#[test]
fn small_pipeline_artifacts_round_trip_and_stages_are_isolated() {
    let dir = tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(out, &small(&["run-full"])), 0);
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    for f in ["policy_1.json", "policy_2.json", "dynamics_1.json", "dataset.csv", "torque_net.json", "feedback_net.json"] {
        let hash = m["artifacts"][f].as_str().unwrap_or_else(|| panic!("{f} missing from manifest"));
        assert_eq!(hash, hopper::manifest::sha256_file(&out.join(f)).unwrap());
    }
    assert!(m.get("timings").is_none());

    let ds = formats::read_dataset(File::open(out.join("dataset.csv")).unwrap()).unwrap();
    assert!(!ds.is_empty());
    let mut buf = Vec::new();
    formats::write_dataset(&mut buf, &ds).unwrap();
    assert_eq!(buf, fs::read(out.join("dataset.csv")).unwrap());
    let again: DistillationDataset = formats::read_dataset(buf.as_slice()).unwrap();
    assert_eq!(again, ds);
    assert!(ds.max_consistency_residual() < 1e-9);

    let dyn_doc: DynamicsDoc = formats::read_json(&out.join("dynamics_1.json")).unwrap();
    let d = dyn_doc.to_dynamics().unwrap();
    assert_eq!(DynamicsDoc::from_dynamics(&d), dyn_doc);

    let stage_dir = tempdir().unwrap();
    let ds_path = out.join("dataset.csv");
    assert_eq!(run(stage_dir.path(), &small(&["distill", "--dataset", ds_path.to_str().unwrap()])), 0);
    for f in ["torque_net.json", "feedback_net.json"] {
        assert_eq!(fs::read(stage_dir.path().join(f)).unwrap(), fs::read(out.join(f)).unwrap(), "{f}");
    }

    let p1 = out.join("policy_1.json");
    let p2 = out.join("policy_2.json");
    let ds_dir = tempdir().unwrap();
    assert_eq!(
        run(ds_dir.path(), &small(&["dataset", "--policies", p1.to_str().unwrap(), p2.to_str().unwrap()])),
        0
    );
    assert_eq!(fs::read(ds_dir.path().join("dataset.csv")).unwrap(), fs::read(&ds_path).unwrap());

    let replay = |name: &str| {
        let csv = out.join(name);
        assert_eq!(run(out, &["replay", p1.to_str().unwrap(), "--beta", "0.1", "--csv", csv.to_str().unwrap()]), 0);
        fs::read(csv).unwrap()
    };
    let a = replay("r1.csv");
    assert_eq!(a, replay("r2.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,h,hdot,phi_h,phidot_h,phi_k,phidot_k,c,u_h,u_k,cost,event"));
    let last = text.lines().last().unwrap();
    assert!(["end", "fall", "collision"].iter().any(|e| last.ends_with(e)), "{last}");
}

#[test]
fn run_full_manifest_hashes_are_reproducible() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    assert_eq!(run(a.path(), &small(&["--threads", "2", "run-full"])), 0);
    assert_eq!(run(b.path(), &small(&["run-full"])), 0);
    let ma = manifest(&a.path().join("manifest.json"));
    let mb = manifest(&b.path().join("manifest.json"));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["counts"], mb["counts"]);

    let c = tempdir().unwrap();
    assert_eq!(run(c.path(), &small(&["--seed", "9", "run-full"])), 0);
    let mc = manifest(&c.path().join("manifest.json"));
    assert_ne!(ma["artifacts"]["dataset.csv"], mc["artifacts"]["dataset.csv"]);
}

#[test]
fn evaluation_commands_write_reports() {
    let dir = tempdir().unwrap();
    let out = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = NetPolicy::new(NetKind::Feedback, &mut rng);
    let model = out.join("feedback_net.json");
    formats::write_json(&model, &ModelDoc::from_net(&net, None, None)).unwrap();
    let m = model.to_str().unwrap();

    assert_eq!(run(out, &["--set", "eval.noise.rollouts=2", "--set", "eval.noise.betas=[0.0,0.1]", "eval-noise", m]), 0);
    let report = formats::read_report(File::open(out.join("reports/noise_feedback_net.csv")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.iter().all(|c| c.n == 2 && c.mean >= 0.0 && c.std >= 0.0));

    assert_eq!(run(out, &["--set", "eval.terrain.n_initial=2", "--set", "eval.terrain.heights=[0.0,0.5]", "eval-terrain", m]), 0);
    let report = formats::read_report(File::open(out.join("reports/terrain_height_feedback_net.csv")).unwrap()).unwrap();
    let survival: Vec<_> = report.cells.iter().filter(|c| c.scenario.ends_with("_survival")).collect();
    assert_eq!(survival.len(), 2);
    assert!(survival.iter().all(|c| (0.0..=1.0).contains(&c.mean)));

    assert_eq!(run(out, &["--set", "eval.marathon.runs=2", "--set", "eval.marathon.duration=1.0", "marathon", m]), 0);
    let report = formats::read_report(File::open(out.join("reports/marathon_feedback_net.csv")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 16);
    assert!(report.cells.iter().all(|c| c.mean > 0.0 && c.mean <= 1.0 + 1e-9));

    assert_eq!(run(out, &["introspect", m]), 0);
    let text = fs::read_to_string(out.join("reports/introspect.csv")).unwrap();
    assert!(text.lines().count() > 1);

    let torque = out.join("torque.json");
    formats::write_json(&torque, &ModelDoc::from_net(&NetPolicy::new(NetKind::Torque, &mut rng), None, None)).unwrap();
    assert_eq!(run(out, &["introspect", torque.to_str().unwrap()]), 1);
    let m = manifest(&out.join("introspect.manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("feedback"));
}

#[test]
fn manifest_records_stage_status() {
    let c = Config::default();
    let mut m = Manifest::new("optimize", &c, false, &["optimize"]);
    m.set_stage("optimize", "ok");
    assert_eq!(m.stages[0].status, "ok");
    assert_eq!(
        hopper::manifest::sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}
