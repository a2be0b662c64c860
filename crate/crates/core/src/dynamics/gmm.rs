//! Full-covariance Gaussian mixture fitted by expectation-maximization.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Cholesky, SMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FitError;
use crate::{Transition, TRANSITION_DIM};

pub type JointCov = SMatrix<f64, TRANSITION_DIM, TRANSITION_DIM>;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub covariance_floor: f64,
    pub seed: u64,
}

/// Mixture over transition tuples `(x, u, x_next)`, used as a prior for the
/// per-timestep dynamics fits.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<Transition>,
    pub covariances: Vec<JointCov>,
    /// Prior strength `n0`, in pseudo-samples.
    pub pseudo_count: f64,
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub prior: GmmPrior,
    /// Mean per-sample log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    /// Components re-seeded from a random sample after going empty.
    pub reinitialized: usize,
}

pub(crate) fn floor_cov(m: &JointCov, floor: f64) -> JointCov {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let r = eig.eigenvectors * SMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (r + r.transpose()) * 0.5
}

fn global_cov(samples: &[Transition], floor: f64) -> JointCov {
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Transition::zeros(), |a, s| a + s) / n;
    let mut cov = JointCov::zeros();
    for s in samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    floor_cov(&(cov / n), floor)
}

struct Component {
    chol: Cholesky<f64, nalgebra::Const<TRANSITION_DIM>>,
    log_norm: f64,
}

impl Component {
    fn new(cov: &JointCov) -> Option<Self> {
        let chol = cov.cholesky()?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (TRANSITION_DIM as f64 * (2.0 * PI).ln() + log_det);
        Some(Component { chol, log_norm })
    }

    fn log_density(&self, mean: &Transition, x: &Transition) -> f64 {
        let mut d = x - mean;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut d);
        self.log_norm - 0.5 * d.norm_squared()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmPrior {
    fn components(&self) -> Result<Vec<Component>, FitError> {
        self.covariances.iter().map(|c| Component::new(c).ok_or(FitError::NonFiniteMoments)).collect()
    }

    /// Posterior component probabilities of a point.
    pub fn responsibilities(&self, x: &Transition) -> Vec<f64> {
        let comps = match self.components() {
            Ok(c) => c,
            Err(_) => return vec![1.0 / self.weights.len() as f64; self.weights.len()],
        };
        let logs: Vec<f64> =
            comps.iter().zip(&self.means).zip(&self.weights).map(|((c, m), w)| w.ln() + c.log_density(m, x)).collect();
        let z = log_sum_exp(&logs);
        logs.iter().map(|l| (l - z).exp()).collect()
    }

    /// Moments of the mixture re-weighted by the responsibilities of `x`.
    pub fn moments_at(&self, x: &Transition) -> (Transition, JointCov) {
        let r = self.responsibilities(x);
        let mean = self.means.iter().zip(&r).fold(Transition::zeros(), |a, (m, w)| a + m * *w);
        let mut cov = JointCov::zeros();
        for ((m, c), w) in self.means.iter().zip(&self.covariances).zip(&r) {
            let d = m - mean;
            cov += (c + d * d.transpose()) * *w;
        }
        (mean, cov)
    }

    /// Mean per-sample log-likelihood of a data set.
    pub fn log_likelihood(&self, samples: &[Transition]) -> Result<f64, FitError> {
        let comps = self.components()?;
        let lw: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut buf = vec![0.0; self.weights.len()];
        let mut total = 0.0;
        for x in samples {
            for (j, c) in comps.iter().enumerate() {
                buf[j] = lw[j] + c.log_density(&self.means[j], x);
            }
            total += log_sum_exp(&buf);
        }
        Ok(total / samples.len() as f64)
    }
}

/// k-means++ seeding followed by a few Lloyd iterations, with distances
/// measured on per-dimension standardized data.
fn initial_mixture(samples: &[Transition], k: usize, base_cov: &JointCov, floor: f64, rng: &mut ChaCha8Rng) -> GmmPrior {
    let scale = base_cov.diagonal().map(|v| 1.0 / v.sqrt());
    let dist2 = |a: &Transition, b: &Transition| (a - b).component_mul(&scale).norm_squared();
    let n = samples.len();
    let mut means = vec![samples[rng.random_range(0..n)]];
    let mut dist: Vec<f64> = samples.iter().map(|s| dist2(s, &means[0])).collect();
    while means.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let m = samples[pick];
        for (d, s) in dist.iter_mut().zip(samples) {
            *d = d.min(dist2(s, &m));
        }
        means.push(m);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for (a, s) in assign.iter_mut().zip(samples) {
            *a = (0..k)
                .min_by(|&i, &j| dist2(s, &means[i]).total_cmp(&dist2(s, &means[j])))
                .unwrap_or(0);
        }
        for (j, m) in means.iter_mut().enumerate() {
            let members: Vec<&Transition> = samples.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(s, _)| s).collect();
            if !members.is_empty() {
                *m = members.iter().fold(Transition::zeros(), |acc, s| acc + *s) / members.len() as f64;
            }
        }
    }

    let mut weights = vec![0.0; k];
    let mut covariances = vec![*base_cov; k];
    for j in 0..k {
        let members: Vec<&Transition> = samples.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(s, _)| s).collect();
        weights[j] = (members.len() as f64).max(1.0) / n as f64;
        if members.len() > 1 {
            let mut cov = JointCov::zeros();
            for s in &members {
                let d = *s - means[j];
                cov += d * d.transpose();
            }
            covariances[j] = floor_cov(&(cov / members.len() as f64), floor);
        }
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    GmmPrior { weights, means, covariances, pseudo_count: 1.0 }
}

/// Fits a `k`-component mixture to `samples` by EM. Covariance eigenvalues
/// are clipped at the floor in every M-step, which is the exact constrained
/// maximizer, so the log-likelihood stays non-decreasing.
pub fn fit_gmm(samples: &[Transition], config: &GmmConfig, warm_start: Option<&GmmPrior>) -> Result<GmmFit, FitError> {
    let k = config.k;
    if k == 0 || samples.len() < k {
        return Err(FitError::TooFewSamples { samples: samples.len(), needed: k.max(1) });
    }
    let n = samples.len();
    let floor = config.covariance_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base_cov = global_cov(samples, floor);

    let mut prior = match warm_start {
        Some(p) if p.weights.len() == k => GmmPrior { pseudo_count: 1.0, ..p.clone() },
        _ => initial_mixture(samples, k, &base_cov, floor, &mut rng),
    };

    let mut log_likelihood = Vec::new();
    let mut reinitialized = 0;
    let mut resp = vec![0.0; n * k];
    let mut buf = vec![0.0; k];

    for _ in 0..config.max_iters.max(1) {
        // E-step
        let comps = prior.components()?;
        let lw: Vec<f64> = prior.weights.iter().map(|w| w.ln()).collect();
        let mut ll = 0.0;
        for (i, x) in samples.iter().enumerate() {
            for j in 0..k {
                buf[j] = lw[j] + comps[j].log_density(&prior.means[j], x);
            }
            let z = log_sum_exp(&buf);
            ll += z;
            for j in 0..k {
                resp[i * k + j] = (buf[j] - z).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(FitError::NonFiniteMoments);
        }
        let converged = log_likelihood.last().is_some_and(|prev: &f64| ll - prev < config.tol);
        log_likelihood.push(ll);
        if converged {
            break;
        }

        // M-step
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk < 1e-8 {
                log::debug!("gmm component {j} emptied, reseeding");
                reinitialized += 1;
                prior.means[j] = samples[rng.random_range(0..n)];
                prior.covariances[j] = base_cov;
                prior.weights[j] = 1.0 / n as f64;
                continue;
            }
            let mean = samples.iter().enumerate().fold(Transition::zeros(), |a, (i, x)| a + x * resp[i * k + j]) / nk;
            let mut cov = JointCov::zeros();
            for (i, x) in samples.iter().enumerate() {
                let d = x - mean;
                cov.ger(resp[i * k + j], &d, &d, 1.0);
            }
            prior.means[j] = mean;
            prior.covariances[j] = floor_cov(&(cov / nk), floor);
            prior.weights[j] = nk / n as f64;
        }
        let wsum: f64 = prior.weights.iter().sum();
        prior.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    Ok(GmmFit { prior, log_likelihood, reinitialized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand_distr::{Distribution, StandardNormal};

    fn config(k: usize) -> GmmConfig {
        GmmConfig { k, max_iters: 200, tol: 1e-10, covariance_floor: 1e-6, seed: 3 }
    }

    #[test]
    fn identical_samples_collapse_to_floor() {
        let x = Transition::from_fn(|i, _| i as f64 * 0.1);
        let samples = vec![x; 20];
        let fit = fit_gmm(&samples, &config(3), None).unwrap();
        assert!(fit.log_likelihood.iter().all(|l| l.is_finite()));
        for c in &fit.prior.covariances {
            assert!((c - JointCov::identity() * 1e-6).abs().max() < 1e-12);
        }
    }

    #[test]
    fn separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centre = |s: f64| Transition::from_fn(|i, _| if i % 2 == 0 { s } else { -s });
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let label = i % 2;
            let c = centre(if label == 0 { 5.0 } else { -5.0 });
            let noise = Transition::from_fn(|_, _| StandardNormal.sample(&mut rng));
            samples.push(c + noise * 0.5);
            labels.push(label);
        }
        let fit = fit_gmm(&samples, &config(2), None).unwrap();
        // map components to clusters by their mean
        let comp_of = |x: &Transition| {
            let r = fit.prior.responsibilities(x);
            if r[0] > r[1] {
                0
            } else {
                1
            }
        };
        let c0 = comp_of(&centre(5.0));
        let correct = samples.iter().zip(&labels).filter(|(x, l)| (comp_of(x) == c0) == (**l == 0)).count();
        assert!(correct as f64 / samples.len() as f64 > 0.99);
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<Transition> = (0..300)
            .map(|i| {
                let shift = (i % 3) as f64 * 2.0;
                Transition::from_fn(|j, _| shift * (j as f64).sin() + { let z: f64 = StandardNormal.sample(&mut rng); z })
            })
            .collect();
        let fit = fit_gmm(&samples, &config(4), None).unwrap();
        assert!(fit.log_likelihood.len() > 2);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", w);
        }
        let s: f64 = fit.prior.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let samples = vec![Transition::zeros(); 2];
        assert!(matches!(fit_gmm(&samples, &config(3), None), Err(FitError::TooFewSamples { .. })));
    }
}
