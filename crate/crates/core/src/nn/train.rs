use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adam, Mlp, NetKind, NetPolicy, NnError, Normalizer};
use crate::{Action, Gain, State};

/// One visited state with the teacher's outputs there.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillationRecord {
    pub x: State,
    /// Noise-free commanded action mean.
    pub g: Action,
    pub k: Action,
    pub gain: Gain,
    pub x_hat: State,
    /// Index of the teacher policy.
    pub policy: usize,
    pub gamma: f64,
    pub episode: usize,
    pub t: usize,
}

impl DistillationRecord {
    /// Regression target for a network of the given kind.
    pub fn target(&self, kind: NetKind) -> Vec<f64> {
        match kind {
            NetKind::Torque => self.g.as_slice().to_vec(),
            NetKind::Feedback => {
                let mut v = Vec::with_capacity(kind.output_dim());
                v.extend_from_slice(self.k.as_slice());
                for r in 0..2 {
                    for c in 0..7 {
                        v.push(self.gain[(r, c)]);
                    }
                }
                v.extend_from_slice(self.x_hat.as_slice());
                v
            }
        }
    }

    /// `|g - (k + K (x - x_hat))|_inf`.
    pub fn consistency_residual(&self) -> f64 {
        (self.g - super::feedback_compose(&self.k, &self.gain, &self.x_hat, &self.x)).amax()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillationDataset {
    pub records: Vec<DistillationRecord>,
}

impl DistillationDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_consistency_residual(&self) -> f64 {
        self.records.iter().map(|r| r.consistency_residual()).fold(0.0, f64::max)
    }

    /// Distinct `(policy, gamma, episode)` triples.
    pub fn episodes(&self) -> usize {
        let mut keys: Vec<(usize, u64, usize)> =
            self.records.iter().map(|r| (r.policy, r.gamma.to_bits(), r.episode)).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_torque: f64,
    pub lr_feedback: f64,
    pub n_batches: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Standardize inputs with the dataset statistics.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            lr_torque: 1e-4,
            lr_feedback: 1e-3,
            n_batches: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, kind: NetKind) -> f64 {
        match kind {
            NetKind::Torque => self.lr_torque,
            NetKind::Feedback => self.lr_feedback,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be positive"));
        }
        if !(self.lr_torque > 0.0 && self.lr_feedback > 0.0) {
            return Err(NnError::InvalidConfig("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::InvalidConfig("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(NnError::InvalidConfig("adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedNet {
    pub net: NetPolicy,
    /// Pre-update loss of every batch.
    pub losses: Vec<f64>,
}

/// Mean squared target error over `batch` and its gradient with respect to
/// the network parameters.
pub fn loss_and_gradient<'a, I>(net: &NetPolicy, batch: I) -> Result<(f64, Vec<f64>), NnError>
where
    I: IntoIterator<Item = &'a DistillationRecord>,
{
    let kind = net.kind();
    let mlp = net.mlp();
    let norm = net.normalizer();
    let mut grad = vec![0.0; mlp.params.len()];
    let mut total = 0.0;
    let mut n = 0usize;
    let mut go = vec![0.0; kind.output_dim()];
    for rec in batch {
        let cache = mlp.forward_cached(&norm.apply(&rec.x))?;
        let out = cache.acts.last().expect("output layer");
        let target = rec.target(kind);
        let mut l = 0.0;
        for ((g, o), t) in go.iter_mut().zip(out).zip(&target) {
            let d = o - t;
            l += d * d;
            *g = 2.0 * d;
        }
        total += l;
        mlp.backward(&cache, &go, &mut grad);
        n += 1;
    }
    if n == 0 {
        return Err(NnError::Empty);
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

/// Torque nets: mean `|g - g_theta(x)|^2`. Feedback nets: mean of the summed
/// squared errors of the three heads.
pub fn distill_loss(net: &NetPolicy, batch: &[DistillationRecord]) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Err(NnError::Empty);
    }
    let kind = net.kind();
    let mut total = 0.0;
    for rec in batch {
        let out = net.mlp().forward(&net.normalizer().apply(&rec.x))?;
        total += out.iter().zip(rec.target(kind)).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// One Adam update on `batch`. Returns the loss before the update; a
/// non-finite loss leaves the network untouched.
pub fn train_step<'a, I>(net: &mut NetPolicy, batch: I, adam: &mut Adam, lr: f64) -> Result<f64, NnError>
where
    I: IntoIterator<Item = &'a DistillationRecord>,
{
    let (loss, grad) = loss_and_gradient(net, batch)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NnError::Diverged { batch: adam.steps as usize, loss });
    }
    adam.step(&mut net.mlp_mut().params, &grad, lr);
    Ok(loss)
}

/// Trains a fresh network of `kind` on mini-batches drawn uniformly with
/// replacement. Deterministic given the seed.
pub fn train(dataset: &[DistillationRecord], kind: NetKind, config: &TrainConfig) -> Result<TrainedNet, NnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(NnError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = NetPolicy::new(kind, &mut rng);
    if config.normalize {
        net.set_normalizer(Normalizer::fit(dataset.iter().map(|r| &r.x)));
    }
    let mut adam = Adam::new(net.mlp().params.len(), config.beta1, config.beta2, config.adam_eps);
    let lr = config.learning_rate(kind);
    let mut losses = Vec::with_capacity(config.n_batches);
    let mut idx = vec![0usize; config.batch_size];
    for b in 0..config.n_batches {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..dataset.len()));
        let loss = train_step(&mut net, idx.iter().map(|&i| &dataset[i]), &mut adam, lr)
            .map_err(|e| match e {
                NnError::Diverged { loss, .. } => NnError::Diverged { batch: b, loss },
                other => other,
            })?;
        losses.push(loss);
        if b % 1000 == 0 {
            log::debug!("{} net batch {b}: loss {loss:.6}", kind.label());
        }
    }
    Ok(TrainedNet { net, losses })
}

/// Parameter count of a network of `kind`.
pub fn param_count(kind: NetKind) -> usize {
    Mlp::param_count(&kind.layer_sizes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::feedback_compose;

    fn random_record(rng: &mut ChaCha8Rng) -> DistillationRecord {
        let x = State::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let k = Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let gain = Gain::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let x_hat = State::from_fn(|_, _| rng.random_range(-1.0..1.0));
        DistillationRecord {
            x,
            g: feedback_compose(&k, &gain, &x_hat, &x),
            k,
            gain,
            x_hat,
            policy: 0,
            gamma: 0.0,
            episode: 0,
            t: 0,
        }
    }

    fn records(n: usize, seed: u64) -> Vec<DistillationRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_record(&mut rng)).collect()
    }

    fn perturbed(kind: NetKind, seed: u64) -> NetPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetPolicy::new(kind, &mut rng);
        for p in &mut net.mlp_mut().params {
            *p += rng.random_range(-0.2..0.2);
        }
        let norm = Normalizer::fit(records(30, seed + 100).iter().map(|r| &r.x));
        net.set_normalizer(norm);
        net
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mlp = Mlp::zeros(&NetKind::Torque.layer_sizes());
        let net = NetPolicy::from_parts(NetKind::Torque, mlp, Normalizer::default()).unwrap();
        let mut rec = records(1, 0).remove(0);
        rec.g = Action::zeros();
        assert_eq!(distill_loss(&net, &[rec.clone()]).unwrap(), 0.0);
        rec.g = Action::new(1.0, 0.0);
        assert_eq!(distill_loss(&net, &[rec]).unwrap(), 1.0);
    }

    #[test]
    fn feedback_loss_sums_all_heads() {
        let mlp = Mlp::zeros(&NetKind::Feedback.layer_sizes());
        let net = NetPolicy::from_parts(NetKind::Feedback, mlp, Normalizer::default()).unwrap();
        let rec = records(1, 1).remove(0);
        let expected = rec.k.norm_squared() + rec.gain.norm_squared() + rec.x_hat.norm_squared();
        assert!((distill_loss(&net, &[rec]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let net = perturbed(NetKind::Torque, 0);
        assert_eq!(distill_loss(&net, &[]), Err(NnError::Empty));
    }

    #[test]
    fn concatenated_loss_is_weighted_mean_of_slices() {
        for kind in [NetKind::Torque, NetKind::Feedback] {
            let net = perturbed(kind, 7);
            let data = records(40, 9);
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            for _ in 0..10 {
                let cut = rng.random_range(1..data.len());
                let (a, b) = data.split_at(cut);
                let whole = distill_loss(&net, &data).unwrap();
                let parts = (a.len() as f64 * distill_loss(&net, a).unwrap()
                    + b.len() as f64 * distill_loss(&net, b).unwrap())
                    / data.len() as f64;
                assert!((whole - parts).abs() < 1e-12 * whole.max(1.0));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [NetKind::Torque, NetKind::Feedback] {
            let net = perturbed(kind, 11);
            let data = records(5, 12);
            let (loss, grad) = loss_and_gradient(&net, &data).unwrap();
            assert!((loss - distill_loss(&net, &data).unwrap()).abs() < 1e-12 * loss.max(1.0));
            let eps = 1e-5;
            for (i, &g) in grad.iter().enumerate() {
                let mut p = net.clone();
                let mut m = net.clone();
                p.mlp_mut().params[i] += eps;
                m.mlp_mut().params[i] -= eps;
                let fd = (distill_loss(&p, &data).unwrap() - distill_loss(&m, &data).unwrap()) / (2.0 * eps);
                let scale = fd.abs().max(g.abs());
                assert!(
                    (fd - g).abs() <= 1e-4 * scale || (fd - g).abs() < 1e-8,
                    "{kind:?} param {i}: fd {fd} vs {}",
                    g
                );
            }
        }
    }

    #[test]
    fn train_step_reports_pre_update_loss() {
        let mut net = perturbed(NetKind::Torque, 3);
        let data = records(16, 4);
        let before = distill_loss(&net, &data).unwrap();
        let mut adam = Adam::new(net.mlp().params.len(), 0.9, 0.999, 1e-8);
        let reported = train_step(&mut net, &data, &mut adam, 1e-2).unwrap();
        assert_eq!(reported, before);
        assert!(distill_loss(&net, &data).unwrap() < before);
    }

    #[test]
    fn non_finite_targets_are_reported_as_divergence() {
        let mut net = perturbed(NetKind::Torque, 3);
        let mut data = records(4, 4);
        data[2].g[0] = f64::NAN;
        let mut adam = Adam::new(net.mlp().params.len(), 0.9, 0.999, 1e-8);
        let before = net.clone();
        assert!(matches!(train_step(&mut net, &data, &mut adam, 1e-2), Err(NnError::Diverged { batch: 0, .. })));
        assert_eq!(net, before);
        let cfg = TrainConfig { n_batches: 5, batch_size: 64, ..TrainConfig::default() };
        assert!(matches!(train(&data, NetKind::Torque, &cfg), Err(NnError::Diverged { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let data = records(200, 5);
        let cfg = TrainConfig { n_batches: 50, batch_size: 32, seed: 99, ..TrainConfig::default() };
        let a = train(&data, NetKind::Feedback, &cfg).unwrap();
        let b = train(&data, NetKind::Feedback, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&data, NetKind::Feedback, &TrainConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn torque_net_learns_a_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let map = Gain::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let data: Vec<DistillationRecord> = (0..2000)
            .map(|_| {
                let mut r = random_record(&mut rng);
                r.g = map * r.x;
                r
            })
            .collect();
        let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };
        let trained = train(&data, NetKind::Torque, &cfg).unwrap();
        let final_loss = distill_loss(&trained.net, &data).unwrap();
        assert_eq!(trained.losses.len(), 20_000);
        assert!(final_loss < 1e-3, "final loss {final_loss}");
    }

    #[test]
    fn feedback_net_fits_constant_heads() {
        let mut data = records(100, 31);
        let template = data[0].clone();
        for r in &mut data {
            r.k = template.k;
            r.gain = template.gain;
            r.x_hat = template.x_hat;
        }
        let cfg = TrainConfig { batch_size: 32, n_batches: 60_000, lr_feedback: 3e-4, seed: 2, ..TrainConfig::default() };
        let trained = train(&data, NetKind::Feedback, &cfg).unwrap();
        let loss = distill_loss(&trained.net, &data).unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn dataset_bookkeeping() {
        let mut data = records(6, 40);
        for (i, r) in data.iter_mut().enumerate() {
            r.episode = i / 2;
        }
        let ds = DistillationDataset { records: data };
        assert_eq!(ds.episodes(), 3);
        assert!(ds.max_consistency_residual() < 1e-12);
        assert_eq!(param_count(NetKind::Feedback), 80 + 110 + 110 + 253);
    }
}
