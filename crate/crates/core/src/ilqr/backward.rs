//! Backward Riccati pass with box-constrained controls, on dense matrices of
//! any state and action size.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use super::IlqrError;

/// One step of a linear-quadratic subproblem in deviation coordinates
/// `z = (dx, du)` around a nominal `(x_hat, u_hat)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqStep {
    /// `dx_{t+1} = f dz + offset`.
    pub f: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Stage cost `grad . z + 0.5 z^T hess z`.
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    /// Nominal action, for the bound `|u_hat + du| <= u_limit`.
    pub u_nominal: DVector<f64>,
    /// Treat the value of the next step as zero (the cost switches there).
    pub reset_next: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoxSolver {
    /// Projected-Newton iterations on the bounded quadratic.
    ProjectedNewton,
    /// Unconstrained minimizer clamped componentwise into the box.
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardConfig {
    pub u_limit: f64,
    pub box_solver: BoxSolver,
    /// Include `f^T V_xx offset` in the Q gradient.
    pub offset_term: bool,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        BackwardConfig { u_limit: f64::INFINITY, box_solver: BoxSolver::ProjectedNewton, offset_term: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardResult {
    pub du: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Action components pinned at a bound, per step.
    pub clamped: Vec<Vec<bool>>,
    /// Value gradient and Hessian at each step (index `T` is the zero tail).
    pub v_x: Vec<DVector<f64>>,
    pub v_xx: Vec<DMatrix<f64>>,
    /// Largest diagonal shift added to `Q_uu`.
    pub max_regularization: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub clamped: Vec<bool>,
}

fn quad_value(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    g.dot(x) + 0.5 * x.dot(&(h * x))
}

fn project(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
}

fn sub_matrix(h: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
}

/// Minimizes `g.x + 0.5 x^T H x` over `lo <= x <= hi` for positive definite
/// `H` by projected Newton steps on the free set with an Armijo search.
pub fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<BoxQpSolution, IlqrError> {
    let n = g.len();
    let mut x = project(&DVector::zeros(n), lo, hi);
    let mut clamped = vec![false; n];
    for _ in 0..100 {
        let grad = g + h * &x;
        for i in 0..n {
            clamped[i] = (x[i] <= lo[i] && grad[i] > 0.0) || (x[i] >= hi[i] && grad[i] < 0.0);
        }
        let free: Vec<usize> = (0..n).filter(|&i| !clamped[i]).collect();
        if free.is_empty() {
            break;
        }
        let hff = sub_matrix(h, &free, &free);
        let chol = hff.cholesky().ok_or(IlqrError::BoxQpNotConvex)?;
        let gf = DVector::from_fn(free.len(), |i, _| grad[free[i]]);
        if gf.norm() < 1e-13 {
            break;
        }
        let step_f = -chol.solve(&gf);
        let mut dir = DVector::zeros(n);
        for (a, &i) in free.iter().enumerate() {
            dir[i] = step_f[a];
        }
        let f0 = quad_value(h, g, &x);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let cand = project(&(&x + &dir * alpha), lo, hi);
            let f1 = quad_value(h, g, &cand);
            if f1 <= f0 + 1e-4 * grad.dot(&(&cand - &x)) {
                accepted = Some((cand, f1));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, f1)) = accepted else { break };
        let moved = (&cand - &x).norm();
        x = cand;
        if moved < 1e-14 || (f0 - f1).abs() < 1e-15 * (1.0 + f0.abs()) {
            break;
        }
    }
    for i in 0..n {
        clamped[i] = x[i] <= lo[i] || x[i] >= hi[i];
    }
    Ok(BoxQpSolution { x, clamped })
}

fn clamp_solve(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<BoxQpSolution, IlqrError> {
    let x0 = -h.clone().cholesky().ok_or(IlqrError::BoxQpNotConvex)?.solve(g);
    let x = project(&x0, lo, hi);
    let clamped = (0..x.len()).map(|i| x[i] != x0[i]).collect();
    Ok(BoxQpSolution { x, clamped })
}

/// Runs the Riccati recursion backwards from a zero value function beyond
/// the last step.
pub fn backward_pass(steps: &[LqStep], config: &BackwardConfig) -> Result<BackwardResult, IlqrError> {
    let horizon = steps.len();
    let first = steps.first().ok_or(IlqrError::EmptyHorizon)?;
    let m = first.u_nominal.len();
    let n = first.f.nrows();
    let mut v_x = vec![DVector::zeros(n); horizon + 1];
    let mut v_xx = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut du = vec![DVector::zeros(m); horizon];
    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    let mut clamped = vec![vec![false; m]; horizon];
    let mut max_reg: f64 = 0.0;

    for t in (0..horizon).rev() {
        let s = &steps[t];
        let (vx_next, vxx_next) = if s.reset_next {
            (DVector::zeros(n), DMatrix::zeros(n, n))
        } else {
            (v_x[t + 1].clone(), v_xx[t + 1].clone())
        };
        let ft = s.f.transpose();
        let mut q = &s.grad + &ft * &vx_next;
        if config.offset_term {
            q += &ft * (&vxx_next * &s.offset);
        }
        let qq = &s.hess + &ft * &vxx_next * &s.f;
        let qq = (&qq + qq.transpose()) * 0.5;
        let q_x = q.rows(0, n).into_owned();
        let q_u = q.rows(n, m).into_owned();
        let q_xx = qq.view((0, 0), (n, n)).into_owned();
        let q_ux = qq.view((n, 0), (m, n)).into_owned();
        let mut q_uu = qq.view((n, n), (m, m)).into_owned();

        if q_uu.clone().cholesky().is_none() {
            let mut mu = 1e-6;
            loop {
                if mu > 1e-2 {
                    return Err(IlqrError::BackwardPassFailed { step: t });
                }
                let shifted = &q_uu + DMatrix::identity(m, m) * mu;
                if shifted.clone().cholesky().is_some() {
                    q_uu = shifted;
                    max_reg = max_reg.max(mu);
                    break;
                }
                mu *= 2.0;
            }
        }

        let lo = DVector::from_fn(m, |i, _| -config.u_limit - s.u_nominal[i]);
        let hi = DVector::from_fn(m, |i, _| config.u_limit - s.u_nominal[i]);
        let sol = match config.box_solver {
            BoxSolver::ProjectedNewton => box_qp(&q_uu, &q_u, &lo, &hi)?,
            BoxSolver::Clamp => clamp_solve(&q_uu, &q_u, &lo, &hi)?,
        };
        let free: Vec<usize> = (0..m).filter(|&i| !sol.clamped[i]).collect();
        let mut k_mat = DMatrix::zeros(m, n);
        if !free.is_empty() {
            let all: Vec<usize> = (0..n).collect();
            let hff = sub_matrix(&q_uu, &free, &free);
            let qf = sub_matrix(&q_ux, &free, &all);
            let kf = -hff.cholesky().ok_or(IlqrError::BackwardPassFailed { step: t })?.solve(&qf);
            for (a, &i) in free.iter().enumerate() {
                k_mat.set_row(i, &kf.row(a));
            }
        }
        let k = sol.x;
        let kt = k_mat.transpose();
        let vx = &q_x + &kt * (&q_uu * &k) + &kt * &q_u + q_ux.transpose() * &k;
        let vxx = &q_xx + &kt * &q_uu * &k_mat + &kt * &q_ux + q_ux.transpose() * &k_mat;
        v_x[t] = vx;
        v_xx[t] = (&vxx + vxx.transpose()) * 0.5;
        du[t] = k;
        gains[t] = k_mat;
        clamped[t] = sol.clamped;
    }
    Ok(BackwardResult { du, gains, clamped, v_x, v_xx, max_regularization: max_reg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over which bound (or none) each coordinate sits on.
    fn active_set_oracle(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
        let n = g.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut x = DVector::zeros(n);
            let mut free = Vec::new();
            let mut c = code;
            for i in 0..n {
                match c % 3 {
                    0 => free.push(i),
                    1 => x[i] = lo[i],
                    _ => x[i] = hi[i],
                }
                c /= 3;
            }
            if !free.is_empty() {
                let fixed: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
                let hff = sub_matrix(h, &free, &free);
                let mut rhs = DVector::from_fn(free.len(), |a, _| -g[free[a]]);
                for (a, &i) in free.iter().enumerate() {
                    for &j in &fixed {
                        rhs[a] -= h[(i, j)] * x[j];
                    }
                }
                let xf = hff.lu().solve(&rhs).unwrap();
                for (a, &i) in free.iter().enumerate() {
                    x[i] = xf[a];
                }
            }
            if (0..n).any(|i| x[i] < lo[i] - 1e-12 || x[i] > hi[i] + 1e-12) {
                continue;
            }
            let v = quad_value(h, g, &x);
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, x));
            }
        }
        best.unwrap().1
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn box_qp_matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let n = rng.random_range(1..=3);
            let h = random_spd(&mut rng, n);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
            let hi = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
            let sol = box_qp(&h, &g, &lo, &hi).unwrap();
            let want = active_set_oracle(&h, &g, &lo, &hi);
            assert!((&sol.x - &want).amax() < 1e-8, "{} vs {}", sol.x, want);
        }
    }

    #[test]
    fn clamping_differs_from_box_qp_when_coupled() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let g = DVector::from_row_slice(&[-2.0, -0.5]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let exact = box_qp(&h, &g, &lo, &hi).unwrap();
        let clamped = clamp_solve(&h, &g, &lo, &hi).unwrap();
        assert!((&exact.x - active_set_oracle(&h, &g, &lo, &hi)).amax() < 1e-12);
        assert!((&exact.x - &clamped.x).amax() > 0.1);
    }

    #[test]
    fn offset_term_shifts_the_feedforward() {
        let (a, b, c, q, r) = (1.1, 0.5, 0.3, 2.0, 0.7);
        let step = LqStep {
            f: DMatrix::from_row_slice(1, 2, &[a, b]),
            offset: DVector::from_element(1, c),
            grad: DVector::zeros(2),
            hess: DMatrix::from_row_slice(2, 2, &[q, 0.0, 0.0, r]),
            u_nominal: DVector::zeros(1),
            reset_next: false,
        };
        let steps = vec![step.clone(), step];
        let with = backward_pass(&steps, &BackwardConfig { offset_term: true, ..BackwardConfig::default() }).unwrap();
        let without = backward_pass(&steps, &BackwardConfig { offset_term: false, ..BackwardConfig::default() }).unwrap();
        // last step: V_x = 0, V_xx = q
        let want = -b * q * c / (r + b * b * q);
        assert!((with.du[0][0] - want).abs() < 1e-14);
        assert_eq!(without.du[0][0], 0.0);
        assert!((&with.gains[0] - &without.gains[0]).amax() < 1e-14);
    }

    fn lq_step(a: &DMatrix<f64>, b: &DMatrix<f64>, hess: &DMatrix<f64>) -> LqStep {
        let (n, m) = (a.nrows(), b.ncols());
        let mut f = DMatrix::zeros(n, n + m);
        f.view_mut((0, 0), (n, n)).copy_from(a);
        f.view_mut((0, n), (n, m)).copy_from(b);
        LqStep {
            f,
            offset: DVector::zeros(n),
            grad: DVector::zeros(n + m),
            hess: hess.clone(),
            u_nominal: DVector::zeros(m),
            reset_next: false,
        }
    }

    #[test]
    fn zero_cost_gives_zero_policy() {
        let a = DMatrix::identity(3, 3);
        let b = DMatrix::from_element(3, 1, 0.5);
        let steps = vec![lq_step(&a, &b, &DMatrix::zeros(4, 4)); 5];
        let mut steps = steps;
        for s in &mut steps {
            s.hess[(3, 3)] = 1.0;
        }
        let r = backward_pass(&steps, &BackwardConfig::default()).unwrap();
        assert!(r.du.iter().all(|d| d.amax() == 0.0));
        assert!(r.gains.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn active_bound_zeroes_feedback_row() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let mut s = lq_step(&a, &b, &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        s.grad = DVector::from_row_slice(&[0.0, -5.0]);
        let r = backward_pass(&[s], &BackwardConfig { u_limit: 1.0, ..BackwardConfig::default() }).unwrap();
        assert_eq!(r.du[0][0], 1.0);
        assert!(r.clamped[0][0]);
        assert_eq!(r.gains[0][(0, 0)], 0.0);
    }

    #[test]
    fn indefinite_q_uu_fails_past_the_regularization_cap() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let s = lq_step(&a, &b, &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(backward_pass(&[s], &BackwardConfig::default()), Err(IlqrError::BackwardPassFailed { step: 0 }));
    }

    #[test]
    fn value_reset_cuts_later_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, m) = (3, 2);
        let make = |rng: &mut ChaCha8Rng| {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let mut s = lq_step(&a, &b, &random_spd(rng, n + m));
            s.grad = DVector::from_fn(n + m, |_, _| rng.random_range(-1.0..1.0));
            s
        };
        let mut steps: Vec<LqStep> = (0..10).map(|_| make(&mut rng)).collect();
        steps[5].reset_next = true; // cost switches at step 6
        let base = backward_pass(&steps, &BackwardConfig::default()).unwrap();
        let mut perturbed = steps.clone();
        for s in &mut perturbed[6..] {
            s.grad *= 3.0;
            s.hess *= 2.0;
        }
        let other = backward_pass(&perturbed, &BackwardConfig::default()).unwrap();
        for t in 0..=5 {
            assert_eq!(base.v_x[t], other.v_x[t]);
            assert_eq!(base.v_xx[t], other.v_xx[t]);
            assert_eq!(base.gains[t], other.gains[t]);
        }
        assert_ne!(base.v_x[6], other.v_x[6]);
    }
}
