#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::NnError;

pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

pub fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Fully connected network, ELU on hidden layers and identity on the output.
///
/// All parameters live in one flat vector: for each layer the row-major
/// `outputs x inputs` weight matrix followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Pre-activations and activations of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] }
    }

    /// He-style uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = rng.random_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        net
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("at least one layer")
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offset of layer `l`'s weights in `params`; its biases follow them.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l) + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    fn check(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() == self.inputs() {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch { expected: self.inputs(), found: x.len() })
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(x)?;
        let mut a = x.to_vec();
        let mut off = 0;
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = elu(*v));
            }
            a = z;
            off += n_in * n_out + n_out;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache, NnError> {
        self.check(x)?;
        let mut acts = Vec::with_capacity(self.sizes.len());
        let mut pre = Vec::with_capacity(self.layers());
        acts.push(x.to_vec());
        let mut off = 0;
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &acts[l];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            let out = if l < last { z.iter().map(|&v| elu(v)).collect() } else { z.clone() };
            pre.push(z);
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(MlpCache { acts, pre })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        let mut delta = grad_out.to_vec();
        let last = self.layers() - 1;
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l < last {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= elu_grad(z);
                }
            }
            let off = self.layer_offset(l);
            let a = &cache.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    for (nx, wi) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *nx += d * wi;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert_eq!(elu_grad(2.0), 1.0);
        assert!((elu_grad(-1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[7, 10, 10, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 0.1, 9.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3]);
        for i in 0..3 {
            net.params[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.5, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let net = Mlp::zeros(&[3, 2]);
        assert_eq!(net.forward(&[1.0]), Err(NnError::ShapeMismatch { expected: 3, found: 1 }));
    }

    #[test]
    fn parameter_layout() {
        let sizes = [7, 10, 10, 10, 2];
        assert_eq!(Mlp::param_count(&sizes), 80 + 110 + 110 + 22);
        let net = Mlp::new(&sizes, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(net.layer_offset(1), 80);
        assert_eq!(net.weights(1).len(), 100);
        assert!(net.biases(2).iter().all(|&b| b == 0.0));
        let bound = (6.0f64 / 7.0).sqrt();
        assert!(net.weights(0).iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn cached_forward_agrees_with_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 6, 5, 3], &mut rng);
        let x = [0.2, -0.7, 1.1, 0.0];
        assert_eq!(net.forward_cached(&x).unwrap().acts.last().unwrap(), &net.forward(&x).unwrap());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        for p in &mut net.params {
            *p += rng.random_range(-0.3..0.3);
        }
        let x = [0.4, -1.2, 0.7];
        let target = [0.5, -0.25];
        let loss = |n: &Mlp| n.forward(&x).unwrap().iter().zip(&target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        let cache = net.forward_cached(&x).unwrap();
        let out = cache.acts.last().unwrap();
        let go: Vec<f64> = out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&cache, &go, &mut grad);
        let eps = 1e-5;
        for (i, &g) in grad.iter().enumerate() {
            let mut p = net.clone();
            let mut m = net.clone();
            p.params[i] += eps;
            m.params[i] -= eps;
            let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - g).abs() < 1e-9, "param {i}: fd {fd} vs {}", g);
        }
    }

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut w = [1.0];
        let grad = [2.0 * w[0]];
        adam.step(&mut w, &grad, 0.1);
        assert!((w[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut w = [1.0, -3.0];
        adam.step(&mut w, &[0.5, 7.0], 0.0);
        assert_eq!(w, [1.0, -3.0]);
    }
}
