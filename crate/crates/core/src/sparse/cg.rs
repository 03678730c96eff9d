//! Jacobi-preconditioned conjugate gradients for Hermitian positive definite
//! systems, real or complex.

use super::{axpy, dot, norm, CsrMatrix, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖b - A x‖ ≤ tol ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

pub fn solve_hpd<T: Scalar>(a: &CsrMatrix<T>, b: &[T], opts: CgOptions) -> Result<CgOutcome<T>> {
    solve_hpd_from(a, b, vec![T::zero(); b.len()], opts, None)
}

/// CG started from `x0`. `observer`, if given, sees every iterate.
pub fn solve_hpd_from<T: Scalar>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Vec<T>,
    opts: CgOptions,
    observer: Option<&mut dyn FnMut(usize, &[T])>,
) -> Result<CgOutcome<T>> {
    let out = pcg(a, b, x0, opts, observer)?;
    if out.residual > opts.tol {
        return Err(Error::CgNotConverged { iterations: out.iterations, residual: out.residual });
    }
    Ok(out)
}

/// CG iteration that stops at `max_iter` without failing; used where an
/// approximate solve is acceptable (eigensolver preconditioning).
pub(crate) fn pcg<T: Scalar>(
    a: &CsrMatrix<T>,
    b: &[T],
    mut x: Vec<T>,
    opts: CgOptions,
    mut observer: Option<&mut dyn FnMut(usize, &[T])>,
) -> Result<CgOutcome<T>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: b.len() });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: x.len() });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| {
            if d.re() > 0.0 {
                Ok(1.0 / d.re())
            } else {
                Err(Error::NotPositiveDefinite { iteration: 0, curvature: d.re() })
            }
        })
        .collect::<Result<_>>()?;

    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome { x: vec![T::zero(); n], iterations: 0, residual: 0.0 });
    }
    let mut r = vec![T::zero(); n];
    a.matvec_into(&x, &mut r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut residual = norm(&r) / b_norm;
    if residual <= opts.tol {
        return Ok(CgOutcome { x, iterations: 0, residual });
    }
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &d)| ri.scale(d)).collect();
    let mut p = z.clone();
    let mut ap = vec![T::zero(); n];
    let mut rz = dot(&r, &z).re();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        a.matvec_into(&p, &mut ap);
        let curvature = dot(&p, &ap).re();
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite { iteration: iterations, curvature });
        }
        let alpha = rz / curvature;
        axpy(T::from_real(alpha), &p, &mut x);
        axpy(T::from_real(-alpha), &ap, &mut r);
        if let Some(obs) = observer.as_mut() {
            obs(iterations, &x);
        }
        residual = norm(&r) / b_norm;
        if residual <= opts.tol {
            break;
        }
        for ((zi, &ri), &d) in z.iter_mut().zip(&r).zip(&inv_diag) {
            *zi = ri.scale(d);
        }
        let rz_new = dot(&r, &z).re();
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + pi.scale(beta);
        }
    }
    Ok(CgOutcome { x, iterations, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    // Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn identity_takes_one_iteration() {
        let b = vec![Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5)];
        let out = solve_hpd(&CsrMatrix::identity(2), &b, CgOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn tridiagonal_matches_dense_oracle() {
        let a = laplacian_1d(10);
        let mut b = vec![0.0; 10];
        b[0] = 1.0;
        let out = solve_hpd(&a, &b, CgOptions { tol: 1e-14, max_iter: 100 }).unwrap();
        let exact = dense_solve(a.to_dense(), b);
        for (x, e) in out.x.iter().zip(&exact) {
            assert!((x - e).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_error_decreases_monotonically() {
        let n = 40;
        let a = laplacian_1d(n);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = dense_solve(a.to_dense(), b.clone());
        let energy = |x: &[f64]| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            dot(&e, &a.matvec(&e).unwrap())
        };
        let mut history = vec![energy(&vec![0.0; n])];
        let mut obs = |_: usize, x: &[f64]| history.push(energy(x));
        solve_hpd_from(&a, &b, vec![0.0; n], CgOptions { tol: 1e-12, max_iter: 200 }, Some(&mut obs)).unwrap();
        assert!(history.len() > 2);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let a = laplacian_1d(200);
        let b = vec![1.0; 200];
        match solve_hpd(&a, &b, CgOptions { tol: 1e-12, max_iter: 5 }) {
            Err(Error::CgNotConverged { iterations: 5, residual }) => assert!(residual > 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_indefinite_operator() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        let err = solve_hpd(&a, &[1.0, -1.0], CgOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        let neg = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(solve_hpd(&neg, &[1.0, 1.0], CgOptions::default()), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let out = solve_hpd(&laplacian_1d(4), &[0.0; 4], CgOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
    }
}
