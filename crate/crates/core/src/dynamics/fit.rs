//! Per-timestep conditioning of a joint Gaussian over `(x, u, x_next)`.

use nalgebra::{SMatrix, SVector, SymmetricEigen};

use super::gmm::{GmmPrior, JointCov};
use super::FitError;
use crate::{State, StateAction, Transition, STATE_DIM, XU_DIM};

/// Above this condition number an unregularized fit is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Mean and covariance of transition tuples at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Transition,
    pub cov: JointCov,
    /// Number of empirical samples behind the moments.
    pub count: usize,
}

pub fn empirical_moments(samples: &[Transition]) -> Moments {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().fold(Transition::zeros(), |a, s| a + s) / n;
    let mut cov = JointCov::zeros();
    for s in samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    Moments { mean, cov: cov / n, count: samples.len() }
}

/// Blends the empirical moments of `samples` with the mixture moments at the
/// empirical mean, treating the prior as `prior.pseudo_count` extra samples.
pub fn posterior_moments(samples: &[Transition], prior: &GmmPrior) -> Moments {
    let emp = empirical_moments(samples);
    let n0 = prior.pseudo_count;
    if n0 <= 0.0 || prior.weights.is_empty() {
        return emp;
    }
    let n = samples.len() as f64;
    let (mu0, phi) = prior.moments_at(&emp.mean);
    let total = n0 + n;
    let mean = (mu0 * n0 + emp.mean * n) / total;
    let d = emp.mean - mu0;
    let cov = (phi * n0 + emp.cov * n + d * d.transpose() * (n0 * n / total)) / total;
    Moments { mean, cov: (cov + cov.transpose()) * 0.5, count: samples.len() }
}

/// One affine-Gaussian transition `x_next ~ N(f_xu [x; u] + f_c, cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepFit {
    pub f_xu: SMatrix<f64, STATE_DIM, XU_DIM>,
    pub f_c: State,
    pub cov: SMatrix<f64, STATE_DIM, STATE_DIM>,
    /// Condition number of the regularized input covariance.
    pub condition: f64,
}

/// `[I 0]`: the identity map from `(x, u)` to `x`.
pub fn identity_shift() -> SMatrix<f64, STATE_DIM, XU_DIM> {
    SMatrix::from_fn(|i, j| if i == j { 1.0 } else { 0.0 })
}

/// Moments of `(xu, x_next - x)` from those of `(xu, x_next)`.
pub fn shift_moments(mean: &Transition, cov: &JointCov) -> (Transition, JointCov) {
    let mut t = JointCov::identity();
    for i in 0..STATE_DIM {
        t[(XU_DIM + i, i)] = -1.0;
    }
    (t * mean, t * cov * t.transpose())
}

/// Conditions the shifted joint Gaussian on `(x, u)` with a ridge of
/// `lambda` on the input covariance, so the transition block is pulled
/// towards the identity as `lambda` grows.
pub fn fit_timestep(mean: &Transition, cov: &JointCov, lambda: f64, floor: f64) -> Result<TimestepFit, FitError> {
    if !(lambda >= 0.0) {
        return Err(FitError::InvalidLambda(lambda));
    }
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(FitError::NonFiniteMoments);
    }
    let (mu, s) = shift_moments(mean, cov);
    let s_in: SMatrix<f64, XU_DIM, XU_DIM> = s.fixed_view::<XU_DIM, XU_DIM>(0, 0).into_owned();
    let s_in = (s_in + s_in.transpose()) * 0.5 + SMatrix::<f64, XU_DIM, XU_DIM>::identity() * lambda;
    let s_dx: SMatrix<f64, STATE_DIM, XU_DIM> = s.fixed_view::<STATE_DIM, XU_DIM>(XU_DIM, 0).into_owned();
    let s_dd: SMatrix<f64, STATE_DIM, STATE_DIM> = s.fixed_view::<STATE_DIM, STATE_DIM>(XU_DIM, XU_DIM).into_owned();
    let mu_in: StateAction = mu.fixed_rows::<XU_DIM>(0).into_owned();
    let mu_d: State = mu.fixed_rows::<STATE_DIM>(XU_DIM).into_owned();

    let eig = SymmetricEigen::new(s_in).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if lambda == 0.0 && !(condition <= MAX_CONDITION) {
        return Err(FitError::IllConditioned { condition });
    }
    let chol = s_in.cholesky().ok_or(FitError::IllConditioned { condition })?;
    // f' = S_dx S_in^-1, via S_in f'^T = S_dx^T
    let f_shift: SMatrix<f64, STATE_DIM, XU_DIM> = chol.solve(&s_dx.transpose()).transpose();
    let f_c = mu_d - f_shift * mu_in;
    let resid = s_dd - f_shift * s_dx.transpose();
    let cov7 = floor_small(&resid, floor);
    Ok(TimestepFit { f_xu: f_shift + identity_shift(), f_c, cov: cov7, condition })
}

fn floor_small(m: &SMatrix<f64, STATE_DIM, STATE_DIM>, floor: f64) -> SMatrix<f64, STATE_DIM, STATE_DIM> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clipped: SVector<f64, STATE_DIM> = eig.eigenvalues.map(|v| v.max(floor));
    let r = eig.eigenvectors * SMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (r + r.transpose()) * 0.5
}
