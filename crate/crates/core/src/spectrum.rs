//! Lowest eigenvalues of the second derivative `E''(u)` against the mass,
//! in real coordinates.
//!
//! `E''(u)` is real-linear but not complex-linear, so a complex vector
//! `v = p + i q` is stored as the real vector `[p; q]` of length `2n`. A dual
//! vector `y` is stored as `[Re y; Im y]`, which makes `xᵀ z` the real pairing
//! `Re(vᴴ y)`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::FeField;
use crate::model::GpeOperators;
use crate::sparse::{
    lowest_eigenpairs, lowest_eigenpairs_constrained, CgOptions, CsrMatrix, EigenOptions, SparsityPattern,
};

/// `E''(u)` and the mass as real symmetric `2n × 2n` matrices.
#[derive(Debug, Clone)]
pub struct RealLinearOperator {
    pub matrix: CsrMatrix<f64>,
    pub mass: CsrMatrix<f64>,
}

impl RealLinearOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(x)
    }
}

pub fn to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

/// `[[a, b], [c, d]]` for four matrices sharing one pattern.
fn block_matrix(pattern: &SparsityPattern, blocks: [&[f64]; 4]) -> CsrMatrix<f64> {
    let n = pattern.dim();
    let offsets = pattern.row_offsets();
    let mut rows = Vec::with_capacity(2 * n);
    let mut values = Vec::with_capacity(4 * pattern.nnz());
    for half in 0..2 {
        let (left, right) = (blocks[2 * half], blocks[2 * half + 1]);
        for i in 0..n {
            let cols = pattern.row(i);
            let range = offsets[i]..offsets[i + 1];
            rows.push(cols.iter().copied().chain(cols.iter().map(|c| c + n)).collect::<Vec<_>>());
            values.extend_from_slice(&left[range.clone()]);
            values.extend_from_slice(&right[range]);
        }
    }
    CsrMatrix::new(Arc::new(SparsityPattern::from_rows(rows)), values)
}

/// `[[Re H, -Im H], [Im H, Re H]]`
pub fn embed_hermitian(h: &CsrMatrix<Complex64>) -> CsrMatrix<f64> {
    let re: Vec<f64> = h.values().iter().map(|z| z.re).collect();
    let im: Vec<f64> = h.values().iter().map(|z| z.im).collect();
    let neg_im: Vec<f64> = im.iter().map(|v| -v).collect();
    block_matrix(h.pattern(), [&re, &neg_im, &im, &re])
}

/// `blockdiag(M, M)`
pub fn embed_real(m: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let zero = vec![0.0; m.values().len()];
    block_matrix(m.pattern(), [m.values(), &zero, &zero, m.values()])
}

/// Real form of `E''(u) = 𝒜_{|u|} + 2β (Re(u v̄) u, ·)`. With `u = a + i b`
/// the second term couples the blocks through `2β ∫ [a², ab; ab, b²] φⱼ φᵢ`.
pub fn build_second_derivative_matrix(ops: &GpeOperators, u: &FeField) -> RealLinearOperator {
    let lin = ops.linearized(u);
    let assembler = ops.assembler();
    let beta = ops.params().beta;
    let uq = crate::assembly::quad_values(u);
    let weighted = |f: fn(Complex64) -> f64| {
        let w: Vec<f64> = uq.iter().map(|&z| 2.0 * beta * f(z)).collect();
        assembler.weighted_mass_from(&w)
    };
    let w_aa = weighted(|z| z.re * z.re);
    let w_ab = weighted(|z| z.re * z.im);
    let w_bb = weighted(|z| z.im * z.im);
    let h = lin.matrix.values();
    let top_left: Vec<f64> = h.iter().zip(w_aa.values()).map(|(z, w)| z.re + w).collect();
    let top_right: Vec<f64> = h.iter().zip(w_ab.values()).map(|(z, w)| -z.im + w).collect();
    let bottom_left: Vec<f64> = h.iter().zip(w_ab.values()).map(|(z, w)| z.im + w).collect();
    let bottom_right: Vec<f64> = h.iter().zip(w_bb.values()).map(|(z, w)| z.re + w).collect();
    let matrix = block_matrix(lin.matrix.pattern(), [&top_left, &top_right, &bottom_left, &bottom_right]);
    RealLinearOperator { matrix, mass: embed_real(ops.mass()) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub count: usize,
    /// Relative eigen-residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// `|μ₁ - λ| ≤ tol_rel · λ` in the quasi-isolation test.
    pub tol_rel: f64,
    pub min_overlap: f64,
    /// Inner CG steps of the eigensolver preconditioner.
    pub inner_max_iter: usize,
    pub seed: u64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { count: 15, tol: 1e-8, max_iter: 2000, tol_rel: 1e-6, min_overlap: 0.999, inner_max_iter: 40, seed: 0x5eed }
    }
}

impl SpectrumConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.count == 0 {
            errs.push("spectrum.count must be at least 1".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            errs.push(format!("spectrum.tol must lie in (0, 1), got {}", self.tol));
        }
        if self.max_iter == 0 {
            errs.push("spectrum.max_iter must be at least 1".into());
        }
        if !(self.tol_rel > 0.0) {
            errs.push(format!("spectrum.tol_rel must be positive, got {}", self.tol_rel));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            errs.push(format!("spectrum.min_overlap must lie in (0, 1], got {}", self.min_overlap));
        }
        errs
    }

    fn eigen_options(&self, count: usize) -> EigenOptions {
        EigenOptions {
            count,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            inner: CgOptions { tol: 1e-2, max_iter: self.inner_max_iter },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub lambda: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Real `2n` vectors, orthonormal in the real mass.
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// `|Re ∫ v₁ conj(i u)|` for the lowest eigenvector `v₁`.
    pub overlap_iu: f64,
    pub gap: f64,
    pub quasi_isolated: bool,
}

/// Unit vector of `i u` in real coordinates.
fn iu_direction(u: &FeField, mass: &CsrMatrix<f64>) -> Vec<f64> {
    let iu: Vec<Complex64> = u.coeffs().iter().map(|z| z * Complex64::i()).collect();
    let x = to_real(&iu);
    let n2 = real_mass_norm_sqr(&x, mass);
    x.iter().map(|v| v / n2.sqrt()).collect()
}

fn real_mass_norm_sqr(x: &[f64], real_mass: &CsrMatrix<f64>) -> f64 {
    let mx = real_mass.matvec(x).expect("dimension");
    x.iter().zip(&mx).map(|(a, b)| a * b).sum()
}

/// `P x = x - Σ q (qᵀ M x)` for `M`-orthonormal directions `q`.
pub fn deflate(x: &[f64], directions: &[Vec<f64>], real_mass: &CsrMatrix<f64>) -> Vec<f64> {
    let mx = real_mass.matvec(x).expect("dimension");
    let mut out = x.to_vec();
    for q in directions {
        let c: f64 = q.iter().zip(&mx).map(|(a, b)| a * b).sum();
        for (o, qi) in out.iter_mut().zip(q) {
            *o -= c * qi;
        }
    }
    out
}

/// `u` and `i u` as `M`-orthonormal real vectors.
pub fn phase_directions(u: &FeField, real_mass: &CsrMatrix<f64>) -> Vec<Vec<f64>> {
    let x = to_real(u.coeffs());
    let n2 = real_mass_norm_sqr(&x, real_mass);
    let x: Vec<f64> = x.iter().map(|v| v / n2.sqrt()).collect();
    vec![x, iu_direction(u, real_mass)]
}

pub fn lowest_spectrum(ops: &GpeOperators, u: &FeField, config: &SpectrumConfig) -> Result<SpectrumResult> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidArgument(errs.join("; ")));
    }
    let lambda = ops.rayleigh_lambda(u)?;
    let op = build_second_derivative_matrix(ops, u);
    // The gap needs two eigenvalues even when only one is reported.
    let mut pairs = lowest_eigenpairs(&op.matrix, &op.mass, &config.eigen_options(config.count.max(2)))?;
    let iu = iu_direction(u, &op.mass);
    let v1 = &pairs.vectors[0];
    let mv1 = op.mass.matvec(v1)?;
    let overlap_iu = iu.iter().zip(&mv1).map(|(a, b)| a * b).sum::<f64>().abs();
    let mu = &pairs.values;
    let gap = mu[1] - mu[0];
    let resolution = 10.0 * 2.0 * mu[1].abs() * pairs.residuals[0].max(pairs.residuals[1]);
    let quasi_isolated =
        (mu[0] - lambda).abs() <= config.tol_rel * lambda.abs() && overlap_iu >= config.min_overlap && gap > resolution;
    tracing::info!(lambda, mu1 = mu[0], gap, overlap_iu, quasi_isolated, iterations = pairs.iterations, "spectrum");
    pairs.values.truncate(config.count);
    pairs.vectors.truncate(config.count);
    pairs.residuals.truncate(config.count);
    Ok(SpectrumResult {
        lambda,
        eigenvalues: pairs.values,
        eigenvectors: pairs.vectors,
        residuals: pairs.residuals,
        iterations: pairs.iterations,
        overlap_iu,
        gap,
        quasi_isolated,
    })
}

/// Smallest eigenvalue of `E''(u) - λM` on the `M`-orthogonal complement of
/// `span{u, iu}`. Positive values certify the discrete inf-sup condition on
/// that complement.
pub fn check_tangent_inf_sup(ops: &GpeOperators, u: &FeField, lambda: f64, config: &SpectrumConfig) -> Result<f64> {
    let op = build_second_derivative_matrix(ops, u);
    let dirs = phase_directions(u, &op.mass);
    let pairs = lowest_eigenpairs_constrained(&op.matrix, &op.mass, &dirs, &config.eigen_options(1))?;
    Ok(pairs.values[0] - lambda)
}

/// `index eigenvalue` rows followed by the summary
/// `lambda mu1 gap overlap_iu quasi_isolated`.
pub fn write_report<W: std::io::Write>(result: &SpectrumResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "index eigenvalue")?;
    for (i, mu) in result.eigenvalues.iter().enumerate() {
        writeln!(out, "{} {:.12e}", i + 1, mu)?;
    }
    writeln!(out, "lambda mu1 gap overlap_iu quasi_isolated")?;
    writeln!(
        out,
        "{:.12e} {:.12e} {:.6e} {:.9} {}",
        result.lambda, result.eigenvalues[0], result.gap, result.overlap_iu, result.quasi_isolated
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ModelParams;
    use crate::fespace::FeSpace;
    use crate::mesh::MeshGrid;
    use crate::solver::{initial_guess, solve_ground_state, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ground_state(params: ModelParams, n: usize, energy_tol: f64) -> (GpeOperators, FeField, f64) {
        let s = FeSpace::new(MeshGrid::uniform(params.half_width, n).unwrap(), 1).unwrap();
        let ops = GpeOperators::new(Arc::clone(&s), params);
        let start = initial_guess(&s, &params, ops.mass()).unwrap();
        let res = solve_ground_state(&ops, &SolverConfig { energy_tol, ..Default::default() }, &start).unwrap();
        (ops, res.u, res.lambda)
    }

    fn random_real(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn real_form_matches_complex_second_derivative() {
        let p = ModelParams::model1();
        let s = FeSpace::new(MeshGrid::uniform(p.half_width, 10).unwrap(), 2).unwrap();
        let ops = GpeOperators::new(Arc::clone(&s), p);
        let u = initial_guess(&s, &p, ops.mass()).unwrap();
        let op = build_second_derivative_matrix(&ops, &u);
        assert!(op.matrix.hermitian_defect() <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random_real(op.dim(), &mut rng);
            let v = FeField::new(Arc::clone(&s), to_complex(&x)).unwrap();
            let expected = to_real(&ops.apply_second_derivative(&u, &v));
            let got = op.apply(&x).unwrap();
            let scale = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-11 * scale);
            }
            let q1: f64 = got.iter().zip(&x).map(|(a, b)| a * b).sum();
            let q2 = GpeOperators::pair(&ops.apply_second_derivative(&u, &v), &v);
            assert!((q1 - q2).abs() <= 1e-11 * q2.abs());
        }
        // Real mass pairing equals the complex mass norm.
        let x = random_real(op.dim(), &mut rng);
        let v = FeField::new(Arc::clone(&s), to_complex(&x)).unwrap();
        assert!((real_mass_norm_sqr(&x, &op.mass) - ops.mass_norm_sqr(&v)).abs() <= 1e-12 * ops.mass_norm_sqr(&v));
    }

    #[test]
    fn without_interaction_eigenvalues_double() {
        let p = ModelParams { beta: 0.0, ..ModelParams::model1() };
        let s = FeSpace::new(MeshGrid::uniform(p.half_width, 8).unwrap(), 1).unwrap();
        let ops = GpeOperators::new(Arc::clone(&s), p);
        let u = initial_guess(&s, &p, ops.mass()).unwrap();
        let op = build_second_derivative_matrix(&ops, &u);
        assert_eq!(op.matrix, embed_hermitian(ops.r_form()));
        let opts = EigenOptions { count: 6, tol: 1e-10, ..Default::default() };
        let real = lowest_eigenpairs(&op.matrix, &op.mass, &opts).unwrap().values;
        // Oracle: dense Hermitian eigenvalues of M^{-1/2} A M^{-1/2} via the
        // Cholesky factor of M.
        let n = s.n_interior();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = ops.mass().get(i, j);
                a[(i, j)] = ops.r_form().get(i, j);
            }
        }
        let l = m.cholesky().unwrap().l().map(|v| Complex64::new(v, 0.0));
        let linv = l.try_inverse().unwrap();
        let c = &linv * a * linv.adjoint();
        let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
        let mut complex: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        complex.sort_by(f64::total_cmp);
        for k in 0..3 {
            assert!((real[2 * k] - complex[k]).abs() <= 1e-8 * complex[k]);
            assert!((real[2 * k + 1] - complex[k]).abs() <= 1e-8 * complex[k]);
        }
    }

    #[test]
    fn oscillator_lowest_pair_spans_u_and_iu() {
        let p = ModelParams::oscillator(6.0);
        let (ops, u, lambda) = ground_state(p, 12, 1e-20);
        let cfg = SpectrumConfig { count: 3, tol: 1e-10, ..Default::default() };
        let spec = lowest_spectrum(&ops, &u, &cfg).unwrap();
        assert!((spec.eigenvalues[0] - lambda).abs() <= 1e-8 * lambda);
        assert!((spec.eigenvalues[1] - lambda).abs() <= 1e-8 * lambda);
        let real_mass = embed_real(ops.mass());
        let dirs = phase_directions(&u, &real_mass);
        // Both eigenvectors lie in span{u, iu}.
        for v in &spec.eigenvectors[..2] {
            let rest = deflate(v, &dirs, &real_mass);
            assert!(real_mass_norm_sqr(&rest, &real_mass) <= 1e-12);
        }
    }

    #[test]
    fn converged_ground_state_is_singular_along_iu() {
        let p = ModelParams::model1();
        let (ops, u, lambda) = ground_state(p, 16, 1e-20);
        let iu = u.scaled(Complex64::i());
        let lhs = ops.apply_second_derivative(&u, &iu);
        let rhs = ops.mass().matvec_complex(iu.coeffs());
        let residual: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b * lambda).norm_sqr()).sum::<f64>().sqrt();
        assert!(residual <= 1e-8, "{residual}");

        let op = build_second_derivative_matrix(&ops, &u);
        let x = to_real(iu.coeffs());
        let ax = op.apply(&x).unwrap();
        let mx = op.mass.matvec(&x).unwrap();
        let residual: f64 = ax.iter().zip(&mx).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        assert!(residual <= 1e-8, "{residual}");
    }

    #[test]
    fn spectrum_of_a_rotating_state() {
        let p = ModelParams::model1();
        let (ops, u, lambda) = ground_state(p, 16, 1e-20);
        let cfg = SpectrumConfig { count: 4, tol: 1e-10, ..Default::default() };
        let spec = lowest_spectrum(&ops, &u, &cfg).unwrap();
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!((spec.eigenvalues[0] - lambda).abs() <= 1e-6 * lambda, "{:?} vs {lambda}", spec.eigenvalues);
        assert!(spec.overlap_iu >= 0.999);

        // Min-max: μ₁ bounds every Rayleigh quotient from below.
        let op = build_second_derivative_matrix(&ops, &u);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random_real(op.dim(), &mut rng);
            let ax = op.apply(&x).unwrap();
            let q = ax.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / real_mass_norm_sqr(&x, &op.mass);
            assert!(q >= spec.eigenvalues[0]);
        }

        // Phase invariance of the spectrum.
        let rotated = u.scaled(Complex64::from_polar(1.0, 1.1));
        let spec2 = lowest_spectrum(&ops, &rotated, &cfg).unwrap();
        for (a, b) in spec.eigenvalues.iter().zip(&spec2.eigenvalues) {
            assert!((a - b).abs() <= 1e-8 * a, "{a} vs {b}");
        }

        // Deflated operator and the raw one.
        let inf_sup = check_tangent_inf_sup(&ops, &u, lambda, &cfg).unwrap();
        let second = spec.eigenvalues[1] - lambda;
        assert!(inf_sup > 0.0);
        assert!((inf_sup - second).abs() <= 1e-6 * lambda, "{inf_sup} vs {second}");
        assert!((spec.eigenvalues[0] - lambda).abs() <= 1e-8 * lambda);

        let mut report = Vec::new();
        write_report(&spec, &mut report).unwrap();
        let text = String::from_utf8(report).unwrap();
        assert_eq!(text.lines().count(), 4 + 3);
        assert!(text.lines().last().unwrap().ends_with("true"));
    }

    #[test]
    fn deflation_is_idempotent() {
        let p = ModelParams::model1();
        let s = FeSpace::new(MeshGrid::uniform(p.half_width, 8).unwrap(), 1).unwrap();
        let ops = GpeOperators::new(Arc::clone(&s), p);
        let u = initial_guess(&s, &p, ops.mass()).unwrap();
        let real_mass = embed_real(ops.mass());
        let dirs = phase_directions(&u, &real_mass);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_real(2 * s.n_interior(), &mut rng);
        let once = deflate(&x, &dirs, &real_mass);
        let twice = deflate(&once, &dirs, &real_mass);
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
