//! Lowest eigenpairs of the generalized symmetric problem `A v = μ B v`.
//!
//! Block preconditioned conjugate gradient iteration (LOBPCG) with a
//! B-orthonormal search basis `[X, W, P]`, Rayleigh–Ritz on that basis, and
//! an approximate inverse of `A + σ B` (inner CG) as preconditioner.
//! Small problems fall back to one Rayleigh–Ritz step on the full space.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cg::{pcg, CgOptions};
use super::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    /// Number of eigenpairs wanted.
    pub count: usize,
    /// Relative residual `‖Av - μBv‖ ≤ tol (‖Av‖ + |μ| ‖Bv‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block columns beyond `count`.
    pub extra: usize,
    pub seed: u64,
    /// Preconditioner is an approximate inverse of `A + shift * B`.
    pub shift: f64,
    /// Inner CG for the preconditioner; `max_iter == 0` means Jacobi only.
    pub inner: CgOptions,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            count: 1,
            tol: 1e-8,
            max_iter: 500,
            extra: 5,
            seed: 0x5eed,
            shift: 0.0,
            inner: CgOptions { tol: 1e-2, max_iter: 40 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// B-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

pub fn lowest_eigenpairs(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>, opts: &EigenOptions) -> Result<EigenPairs> {
    lowest_eigenpairs_constrained(a, b, &[], opts)
}

/// Same as [`lowest_eigenpairs`] restricted to the B-orthogonal complement of
/// `constraints`, which must be B-orthonormal.
pub fn lowest_eigenpairs_constrained(
    a: &CsrMatrix<f64>,
    b: &CsrMatrix<f64>,
    constraints: &[Vec<f64>],
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: b.dim() });
    }
    if let Some(c) = constraints.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: c.len() });
    }
    let free = n.saturating_sub(constraints.len());
    if opts.count == 0 || opts.count > free {
        return Err(Error::InvalidArgument(format!(
            "cannot compute {} eigenpairs in a space of dimension {free}",
            opts.count
        )));
    }
    let q = DMatrix::from_fn(n, constraints.len(), |i, j| constraints[j][i]);
    let bq = spmm(b, &q);
    let block = (opts.count + opts.extra).min(free);

    if free <= 3 * block {
        return dense_rayleigh_ritz(a, b, &q, &bq, opts.count);
    }

    let precond = Preconditioner::new(a, b, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.gen_range(-1.0..1.0));
    project_out(&mut x, &q, &bq);
    let bx0 = spmm(b, &x);
    let (x0, _) = svqb(&x, &bx0);
    let ax0 = spmm(a, &x0);
    let bx0 = spmm(b, &x0);
    let (mut x, mut ax, mut bx, mut mu) = ritz(&x0, &ax0, &bx0, block);
    let mut p: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut residuals = vec![f64::INFINITY; block];

    for iteration in 0..=opts.max_iter {
        let mut r = &ax - &bx * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&mu));
        project_out_dual(&mut r, &q, &bq);
        for j in 0..block {
            let scale = ax.column(j).norm() + mu[j].abs() * bx.column(j).norm();
            residuals[j] = r.column(j).norm() / scale.max(f64::MIN_POSITIVE);
        }
        if residuals[..opts.count].iter().all(|&res| res <= opts.tol) {
            let vectors = (0..opts.count).map(|j| x.column(j).iter().copied().collect()).collect();
            return Ok(EigenPairs {
                values: mu[..opts.count].to_vec(),
                vectors,
                residuals: residuals[..opts.count].to_vec(),
                iterations: iteration,
            });
        }
        if iteration == opts.max_iter {
            break;
        }

        let active: Vec<usize> = (0..block).filter(|&j| residuals[j] > opts.tol).collect();
        let mut w = DMatrix::zeros(n, active.len());
        for (k, &j) in active.iter().enumerate() {
            let col: Vec<f64> = r.column(j).iter().copied().collect();
            let z = precond.apply(&col)?;
            w.column_mut(k).copy_from_slice(&z);
        }
        let mut z = match &p {
            Some((pp, _, _)) => concat(&w, pp),
            None => w,
        };
        for _ in 0..2 {
            project_out(&mut z, &q, &bq);
            let coeff = bx.transpose() * &z;
            z -= &x * coeff;
        }
        let bz = spmm(b, &z);
        let (z, c) = svqb(&z, &bz);
        let bz = bz * c;
        let az = spmm(a, &z);

        let s = concat(&x, &z);
        let as_ = concat(&ax, &az);
        let bs = concat(&bx, &bz);
        let mut h = s.transpose() * &as_;
        symmetrize(&mut h);
        let (vals, y) = sorted_eigen(h);
        let y = y.columns(0, block).into_owned();
        let yz = y.rows(block, z.ncols()).into_owned();
        p = Some((&z * &yz, &az * &yz, &bz * &yz));
        x = &s * &y;
        ax = &as_ * &y;
        bx = &bs * &y;
        mu = vals[..block].to_vec();
    }
    Err(Error::EigenNotConverged { iterations: opts.max_iter, residuals: residuals[..opts.count].to_vec() })
}

enum Preconditioner {
    Jacobi(Vec<f64>),
    Cg(CsrMatrix<f64>, CgOptions),
}

impl Preconditioner {
    fn new(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>, opts: &EigenOptions) -> Result<Self> {
        let k = if opts.shift == 0.0 { a.clone() } else { a.add_scaled(b, opts.shift) };
        if opts.inner.max_iter == 0 {
            let inv = k
                .diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { Ok(1.0 / d) } else { Err(Error::NotPositiveDefinite { iteration: 0, curvature: d }) })
                .collect::<Result<_>>()?;
            Ok(Self::Jacobi(inv))
        } else {
            Ok(Self::Cg(k, opts.inner))
        }
    }

    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Jacobi(inv) => Ok(r.iter().zip(inv).map(|(a, b)| a * b).collect()),
            Self::Cg(k, opts) => Ok(pcg(k, r, vec![0.0; r.len()], *opts, None)?.x),
        }
    }
}

fn spmm(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut y = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let src = &x.as_slice()[j * n..(j + 1) * n];
        let dst = &mut y.as_mut_slice()[j * n..(j + 1) * n];
        a.matvec_into(src, dst);
    }
    y
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let t = h.transpose();
    *h += t;
    *h *= 0.5;
}

/// `x ← x - Q (BQ)^T x`
fn project_out(x: &mut DMatrix<f64>, q: &DMatrix<f64>, bq: &DMatrix<f64>) {
    if q.ncols() > 0 {
        let c = bq.transpose() * &*x;
        *x -= q * c;
    }
}

/// `r ← r - BQ Q^T r`, the adjoint projection for residuals.
fn project_out_dual(r: &mut DMatrix<f64>, q: &DMatrix<f64>, bq: &DMatrix<f64>) {
    if q.ncols() > 0 {
        let c = q.transpose() * &*r;
        *r -= bq * c;
    }
}

/// B-orthonormalizes the columns of `x` (SVQB), dropping numerically
/// dependent directions. Returns the new basis and the transform `c` with
/// `x_new = x c`.
fn svqb(x: &DMatrix<f64>, bx: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = x.ncols();
    let mut g = x.transpose() * bx;
    symmetrize(&mut g);
    let d: Vec<f64> = (0..k).map(|i| 1.0 / g[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] *= d[i] * d[j];
        }
    }
    let (vals, vecs) = sorted_eigen(g);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..k).filter(|&i| vals[i] > 1e-12 * top).collect();
    let mut c = DMatrix::zeros(k, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let s = 1.0 / vals[i].sqrt();
        for r in 0..k {
            c[(r, col)] = d[r] * vecs[(r, i)] * s;
        }
    }
    (x * &c, c)
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Rayleigh–Ritz on a B-orthonormal basis, keeping the lowest `keep` pairs.
fn ritz(
    s: &DMatrix<f64>,
    as_: &DMatrix<f64>,
    bs: &DMatrix<f64>,
    keep: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let mut h = s.transpose() * as_;
    symmetrize(&mut h);
    let (vals, y) = sorted_eigen(h);
    let y = y.columns(0, keep).into_owned();
    (s * &y, as_ * &y, bs * &y, vals[..keep].to_vec())
}

fn dense_rayleigh_ritz(
    a: &CsrMatrix<f64>,
    b: &CsrMatrix<f64>,
    q: &DMatrix<f64>,
    bq: &DMatrix<f64>,
    count: usize,
) -> Result<EigenPairs> {
    let n = a.dim();
    let mut basis = DMatrix::identity(n, n);
    project_out(&mut basis, q, bq);
    let bb = spmm(b, &basis);
    let (s, _) = svqb(&basis, &bb);
    if s.ncols() < count {
        return Err(Error::InvalidArgument(format!("B is singular on the search space (rank {})", s.ncols())));
    }
    let as_ = spmm(a, &s);
    let bs = spmm(b, &s);
    let (x, ax, bx, mu) = ritz(&s, &as_, &bs, count);
    let residuals = (0..count)
        .map(|j| {
            let r = ax.column(j) - bx.column(j) * mu[j];
            r.norm() / (ax.column(j).norm() + mu[j].abs() * bx.column(j).norm()).max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(EigenPairs {
        values: mu,
        vectors: (0..count).map(|j| x.column(j).iter().copied().collect()).collect(),
        residuals,
        iterations: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_b_orthonormal(b: &CsrMatrix<f64>, vectors: &[Vec<f64>]) {
        for (i, vi) in vectors.iter().enumerate() {
            let bvi = b.matvec(vi).unwrap();
            for (j, vj) in vectors.iter().enumerate() {
                let g: f64 = vj.iter().zip(&bvi).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-8, "gram[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn diagonal_problem() {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let b = CsrMatrix::identity(4);
        let out = lowest_eigenpairs(&a, &b, &EigenOptions { count: 2, ..Default::default() }).unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-12 && (out.values[1] - 2.0).abs() < 1e-12);
        assert!((out.vectors[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((out.vectors[1][1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_eigenvalue() {
        let a = CsrMatrix::from_diagonal(&[1.0, 1.0, 2.0]);
        let b = CsrMatrix::identity(3);
        let out = lowest_eigenpairs(&a, &b, &EigenOptions { count: 2, ..Default::default() }).unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-12 && (out.values[1] - 1.0).abs() < 1e-12);
        check_b_orthonormal(&b, &out.vectors);
        for v in &out.vectors {
            assert!(v[2].abs() < 1e-12);
        }
    }

    // Linear FEM on [0, π] with Dirichlet ends.
    fn fem_1d(n: usize) -> (CsrMatrix<f64>, CsrMatrix<f64>) {
        let h = std::f64::consts::PI / (n + 1) as f64;
        let (mut k, mut m) = (Vec::new(), Vec::new());
        for i in 0..n {
            k.push((i, i, 2.0 / h));
            m.push((i, i, 4.0 * h / 6.0));
            if i + 1 < n {
                for (r, c) in [(i, i + 1), (i + 1, i)] {
                    k.push((r, c, -1.0 / h));
                    m.push((r, c, h / 6.0));
                }
            }
        }
        (CsrMatrix::from_triplets(n, &k), CsrMatrix::from_triplets(n, &m))
    }

    #[test]
    fn fem_laplacian_matches_closed_form_discrete_spectrum() {
        // Oracle: the discrete generalized eigenvalues of the P1 pair are
        //   μ_j = (6/h²) (1 - cos(jh)) / (2 + cos(jh)),
        // which approximate j².
        let n = 50;
        let (k, m) = fem_1d(n);
        let h = std::f64::consts::PI / (n + 1) as f64;
        let opts = EigenOptions { count: 3, tol: 1e-10, ..Default::default() };
        let out = lowest_eigenpairs(&k, &m, &opts).unwrap();
        assert!(out.iterations > 1, "took the dense path");
        for (j, mu) in out.values.iter().enumerate() {
            let t = (j + 1) as f64 * h;
            let exact = 6.0 / (h * h) * (1.0 - t.cos()) / (2.0 + t.cos());
            assert!((mu - exact).abs() < 1e-8 * exact, "{mu} vs {exact}");
            let jj = ((j + 1) * (j + 1)) as f64;
            assert!((mu - jj).abs() < 0.02 * jj);
        }
        check_b_orthonormal(&m, &out.vectors);
        for r in &out.residuals {
            assert!(*r <= 1e-10);
        }
    }

    #[test]
    fn fem_laplacian_matches_dense_oracle() {
        let n = 60;
        let (k, m) = fem_1d(n);
        let opts = EigenOptions { count: 4, tol: 1e-10, inner: CgOptions { tol: 1e-1, max_iter: 0 }, max_iter: 2000, ..Default::default() };
        let out = lowest_eigenpairs(&k, &m, &opts).unwrap();
        // Dense oracle: Cholesky of M, symmetric eigen of L^{-1} K L^{-T}.
        let kd = DMatrix::from_fn(n, n, |i, j| k.get(i, j));
        let md = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
        let l = md.cholesky().unwrap().l();
        let li = l.clone().try_inverse().unwrap();
        let c = &li * kd * li.transpose();
        let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for j in 0..4 {
            assert!((out.values[j] - ev[j]).abs() < 1e-9 * ev[j]);
        }
    }

    #[test]
    fn constrained_problem_skips_deflated_direction() {
        let n = 40;
        let (k, m) = fem_1d(n);
        let opts = EigenOptions { count: 2, tol: 1e-10, ..Default::default() };
        let full = lowest_eigenpairs(&k, &m, &EigenOptions { count: 3, ..opts.clone() }).unwrap();
        let deflated = lowest_eigenpairs_constrained(&k, &m, &full.vectors[..1], &opts).unwrap();
        assert!((deflated.values[0] - full.values[1]).abs() < 1e-8 * full.values[1]);
        assert!((deflated.values[1] - full.values[2]).abs() < 1e-8 * full.values[2]);
    }

    #[test]
    fn rejects_too_many_pairs() {
        let a = CsrMatrix::<f64>::identity(3);
        assert!(lowest_eigenpairs(&a, &a, &EigenOptions { count: 4, ..Default::default() }).is_err());
    }
}
