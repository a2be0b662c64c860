use hopper_core::ilqr::{backward_pass, BackwardConfig, LqStep};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let radius: f64 = a.complex_eigenvalues().iter().map(|e| (e.re * e.re + e.im * e.im).sqrt()).fold(0.0, f64::max);
    a * (0.95 / radius)
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * shift
}

/// Textbook finite-horizon discrete LQR for `sum 0.5 x'Qx + 0.5 u'Ru` with
/// zero terminal cost: `P_T = 0`, `K = (R + B'PB)^-1 B'PA`, `u = -K x`,
/// `P <- Q + A'P(A - BK)`.
fn riccati_gains(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Vec<DMatrix<f64>> {
    let n = a.nrows();
    let mut p = DMatrix::zeros(n, n);
    let mut gains = vec![DMatrix::zeros(b.ncols(), n); horizon];
    for t in (0..horizon).rev() {
        let s = r + b.transpose() * &p * b;
        let k = s.try_inverse().unwrap() * b.transpose() * &p * a;
        p = q + a.transpose() * &p * (a - b * &k);
        p = (&p + p.transpose()) * 0.5;
        gains[t] = -k;
    }
    gains
}

#[test]
fn unconstrained_backward_pass_matches_riccati() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, m, horizon) = (4, 2, 50);
    for _ in 0..5 {
        let a = random_stable(&mut rng, n);
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let q = random_psd(&mut rng, n, 0.0);
        let r = random_psd(&mut rng, m, 0.1);
        let mut f = DMatrix::zeros(n, n + m);
        f.view_mut((0, 0), (n, n)).copy_from(&a);
        f.view_mut((0, n), (n, m)).copy_from(&b);
        let mut hess = DMatrix::zeros(n + m, n + m);
        hess.view_mut((0, 0), (n, n)).copy_from(&q);
        hess.view_mut((n, n), (m, m)).copy_from(&r);
        let step = LqStep {
            f,
            offset: DVector::zeros(n),
            grad: DVector::zeros(n + m),
            hess,
            u_nominal: DVector::zeros(m),
            reset_next: false,
        };
        let result = backward_pass(&vec![step; horizon], &BackwardConfig::default()).unwrap();
        let oracle = riccati_gains(&a, &b, &q, &r, horizon);
        let err = result.gains.iter().zip(&oracle).map(|(k, o)| (k - o).amax()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max gain error {err}");
        assert!(result.du.iter().all(|d| d.amax() < 1e-12));
    }
}
