//! Energy, first and second derivatives, eigenvalue and error quantities of
//! the Gross–Pitaevskii model evaluated on discrete fields.
//!
//! Pairings follow the real-Hilbert-space convention: a dual vector `y`
//! (complex, one entry per interior dof) acts on a field `w` as
//! `Re(wᴴ y)`. Complex inner products appear only in phase alignment and in
//! the error decomposition.

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::assembly::{quad_values, warn_if_indefinite, Assembler, ModelParams};
use crate::error::{Error, Result};
use crate::fespace::{FeField, FeSpace};
use crate::sparse::{dot, CsrMatrix};

/// `A_R + β W(u)` for one field state.
#[derive(Debug)]
pub struct Linearized {
    version: u64,
    pub weighted_mass: CsrMatrix<f64>,
    pub matrix: CsrMatrix<Complex64>,
}

/// Assembled operators of one model on one space.
#[derive(Debug)]
pub struct GpeOperators {
    assembler: Assembler,
    params: ModelParams,
    mass: CsrMatrix<f64>,
    r_form: CsrMatrix<Complex64>,
    stiffness: OnceLock<CsrMatrix<f64>>,
    quad_weights: OnceLock<Vec<f64>>,
    linearized: Mutex<Option<Arc<Linearized>>>,
}

impl GpeOperators {
    pub fn new(space: Arc<FeSpace>, params: ModelParams) -> Self {
        warn_if_indefinite(&space, &params);
        let assembler = Assembler::new(space);
        let mass = assembler.mass();
        let r_form = assembler.r_form(&params);
        Self { assembler, params, mass, r_form, stiffness: OnceLock::new(), quad_weights: OnceLock::new(), linearized: Mutex::new(None) }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        self.assembler.space()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn mass(&self) -> &CsrMatrix<f64> {
        &self.mass
    }

    pub fn r_form(&self) -> &CsrMatrix<Complex64> {
        &self.r_form
    }

    pub fn stiffness(&self) -> &CsrMatrix<f64> {
        self.stiffness.get_or_init(|| self.assembler.stiffness())
    }

    /// Quadrature weight times element area, indexed like `quad_values`.
    pub fn quad_weights(&self) -> &[f64] {
        self.quad_weights.get_or_init(|| {
            let space = self.space();
            let weights = space.rule().weights();
            (0..space.n_elements())
                .flat_map(|t| {
                    let area = space.geometry(t).area;
                    weights.iter().map(move |w| w * area)
                })
                .collect()
        })
    }

    fn check_space(&self, w: &FeField) {
        assert!(self.space().same_space(w.space()), "field lives on a different space");
    }

    /// `A_R + β W(u)`, reassembled whenever `u` changes.
    pub fn linearized(&self, u: &FeField) -> Arc<Linearized> {
        self.check_space(u);
        let mut cache = self.linearized.lock().unwrap();
        if let Some(lin) = cache.as_ref() {
            if lin.version == u.version() {
                return Arc::clone(lin);
            }
        }
        let weighted_mass = self.assembler.weighted_mass(u);
        let beta = self.params.beta;
        let values = self
            .r_form
            .values()
            .iter()
            .zip(weighted_mass.values())
            .map(|(&a, &w)| a + beta * w)
            .collect();
        let matrix = CsrMatrix::new(Arc::clone(self.assembler.pattern()), values);
        let lin = Arc::new(Linearized { version: u.version(), weighted_mass, matrix });
        *cache = Some(Arc::clone(&lin));
        lin
    }

    /// `wᴴ M w`
    pub fn mass_norm_sqr(&self, w: &FeField) -> f64 {
        dot(w.coeffs(), &self.mass.matvec_complex(w.coeffs())).re
    }

    /// `∫ |w|⁴` by quadrature of the pointwise values.
    pub fn quartic(&self, w: &FeField) -> f64 {
        self.check_space(w);
        let space = self.space();
        let weights = space.rule().weights();
        let nq = weights.len();
        quad_values(w)
            .chunks(nq)
            .enumerate()
            .map(|(t, vals)| {
                let area = space.geometry(t).area;
                vals.iter().zip(weights).map(|(v, wq)| wq * v.norm_sqr().powi(2)).sum::<f64>() * area
            })
            .sum()
    }

    /// `∫ |a|² |b|²`
    pub fn density_product(&self, a: &FeField, b: &FeField) -> f64 {
        self.check_space(a);
        self.check_space(b);
        let space = self.space();
        let weights = space.rule().weights();
        let nq = weights.len();
        let va = quad_values(a);
        let vb = quad_values(b);
        va.chunks(nq)
            .zip(vb.chunks(nq))
            .enumerate()
            .map(|(t, (x, y))| {
                let s: f64 = x.iter().zip(y).zip(weights).map(|((p, q), w)| w * p.norm_sqr() * q.norm_sqr()).sum();
                s * space.geometry(t).area
            })
            .sum()
    }

    /// `E(w) = ½ ‖w‖_R² + (β/4) ∫ |w|⁴`
    pub fn energy(&self, w: &FeField) -> f64 {
        self.check_space(w);
        let quad = dot(w.coeffs(), &self.r_form.matvec(w.coeffs()).expect("same space"));
        let e = 0.5 * quad.re + 0.25 * self.params.beta * self.quartic(w);
        debug_assert!(quad.im.abs() <= 1e-12 * e.abs() + f64::MIN_POSITIVE, "Im(wᴴ A_R w) = {}", quad.im);
        e
    }

    /// `𝒜_{|u|} v = (A_R + β W(u)) v`
    pub fn apply_gpe_operator(&self, u: &FeField, v: &FeField) -> Vec<Complex64> {
        self.check_space(v);
        let lin = self.linearized(u);
        lin.matrix.matvec(v.coeffs()).expect("same space")
    }

    /// `λ = Re(uᴴ 𝒜_{|u|} u) / (uᴴ M u)`
    pub fn rayleigh_lambda(&self, u: &FeField) -> Result<f64> {
        self.check_space(u);
        let norm2 = self.mass_norm_sqr(u);
        if !(norm2 > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let quad = dot(u.coeffs(), &self.r_form.matvec(u.coeffs()).expect("same space")).re;
        Ok((quad + self.params.beta * self.quartic(u)) / norm2)
    }

    /// `E''(u) v = 𝒜_{|u|} v + 2β (Re(u v̄) u, ·)`; real-linear in `v`.
    pub fn apply_second_derivative(&self, u: &FeField, v: &FeField) -> Vec<Complex64> {
        self.check_space(v);
        let mut y = self.apply_gpe_operator(u, v);
        let beta = self.params.beta;
        if beta == 0.0 {
            return y;
        }
        let space = &**self.space();
        let nl = space.n_local();
        let table = space.table();
        let weights = space.rule().weights();
        let uq = quad_values(u);
        let vq = quad_values(v);
        let nq = weights.len();
        let idx = space.interior_index();
        for t in 0..space.n_elements() {
            let area = space.geometry(t).area;
            let dofs = space.element_dofs(t);
            for (q, w) in weights.iter().enumerate() {
                let uu = uq[t * nq + q];
                let vv = vq[t * nq + q];
                let coupling = (uu * vv.conj()).re;
                let f = uu * (2.0 * beta * coupling * w * area);
                let phi = table.values_at(q);
                for i in 0..nl {
                    if let Some(row) = idx[dofs[i]] {
                        y[row] += f * phi[i];
                    }
                }
            }
        }
        y
    }

    /// `Re(wᴴ y)`: a dual vector acting on a field.
    pub fn pair(y: &[Complex64], w: &FeField) -> f64 {
        dot(w.coeffs(), y).re
    }
}

/// Unit `M`-norm copy of `u`; phase untouched.
pub fn normalize(u: &FeField, mass: &CsrMatrix<f64>) -> Result<FeField> {
    let n2 = dot(u.coeffs(), &mass.matvec_complex(u.coeffs())).re;
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(u.scaled(Complex64::new(1.0 / n2.sqrt(), 0.0)))
}

/// Rotates `u_ref` by `e^{iθ}` so that `∫ u_h conj(e^{iθ} u_ref)` is real and
/// nonnegative. Returns the rotated field and `θ`.
pub fn phase_align(u_h: &FeField, u_ref: &FeField, mass: &CsrMatrix<f64>) -> Result<(FeField, f64)> {
    // z = ∫ u_h conj(u_ref); the symmetrized form makes z exactly real
    // when both fields coincide.
    let a = u_ref.coeffs();
    let b = u_h.coeffs();
    let ma = mass.matvec_complex(a);
    let mb = mass.matvec_complex(b);
    let bilinear = |x: &[Complex64], mx: &[Complex64], y: &[Complex64], my: &[Complex64], f: fn(Complex64, Complex64) -> f64| {
        let xy: f64 = x.iter().zip(my).map(|(&p, &q)| f(p, q)).sum();
        let yx: f64 = y.iter().zip(mx).map(|(&p, &q)| f(q, p)).sum();
        0.5 * (xy + yx)
    };
    let re = bilinear(a, &ma, b, &mb, |p, q| p.re * q.re + p.im * q.im);
    let im = bilinear(a, &ma, b, &mb, |p, q| p.re * q.im - p.im * q.re);
    let z = Complex64::new(re, im);
    if z.norm() < 1e-12 {
        return Err(Error::OrthogonalStates(z.norm()));
    }
    let theta = z.arg();
    Ok((u_ref.scaled(Complex64::from_polar(1.0, theta)), theta))
}

/// Exact nodal transfer of `field` to a space on a nested (finer or equal)
/// mesh.
pub fn prolongate(field: &FeField, fine: &Arc<FeSpace>) -> Result<FeField> {
    let coarse = field.space();
    if !coarse.mesh().is_nested_in(fine.mesh()) {
        return Err(Error::NonNested(format!(
            "N_h = {} on R = {} is not nested in N_h = {} on R = {}",
            coarse.mesh().subdivisions(),
            coarse.mesh().half_width(),
            fine.mesh().subdivisions(),
            fine.mesh().half_width()
        )));
    }
    if fine.order() < coarse.order() && fine.mesh().subdivisions() == coarse.mesh().subdivisions() {
        return Err(Error::NonNested(format!(
            "P{} is not contained in P{} on the same mesh",
            coarse.order(),
            fine.order()
        )));
    }
    let nc = coarse.mesh().subdivisions();
    let den = fine.lattice();
    let row = den + 1;
    let locate = |index: usize| {
        let num = index * nc;
        let (cell, rem) = (num / den, num % den);
        if cell == nc {
            (nc - 1, den)
        } else {
            (cell, rem)
        }
    };
    let mut coeffs = Vec::with_capacity(fine.n_interior());
    for &g in fine.interior_dofs() {
        let (ci, ri) = locate(g % row);
        let (cj, rj) = locate(g / row);
        let s = ri as f64 / den as f64;
        let t = rj as f64 / den as f64;
        let cell = cj * nc + ci;
        // Lower-right triangle (a, b, c) when t <= s, else (a, c, d).
        let (tri, bary) = if rj <= ri { (2 * cell, [1.0 - s, s - t, t]) } else { (2 * cell + 1, [1.0 - t, s, t - s]) };
        coeffs.push(field.evaluate(tri, bary).0);
    }
    FeField::new(Arc::clone(fine), coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    /// Full `H¹` norm.
    pub h1: f64,
    pub h1_semi: f64,
}

/// Mass and stiffness of a reference space, reused across levels.
#[derive(Debug)]
pub struct ErrorMetric {
    space: Arc<FeSpace>,
    mass: CsrMatrix<f64>,
    stiffness: CsrMatrix<f64>,
}

impl ErrorMetric {
    pub fn new(space: Arc<FeSpace>) -> Self {
        let assembler = Assembler::new(Arc::clone(&space));
        Self { mass: assembler.mass(), stiffness: assembler.stiffness(), space }
    }

    pub fn from_operators(ops: &GpeOperators) -> Self {
        Self { space: Arc::clone(ops.space()), mass: ops.mass().clone(), stiffness: ops.stiffness().clone() }
    }

    /// Norms of `u_ref - u_h` on the reference space; `u_h` is prolongated
    /// first. Phases are taken as given.
    pub fn norms(&self, u_h: &FeField, u_ref: &FeField) -> Result<ErrorNorms> {
        assert!(self.space.same_space(u_ref.space()));
        let u_h = if u_h.space().same_space(&self.space) { u_h.clone() } else { prolongate(u_h, &self.space)? };
        let e: Vec<Complex64> = u_ref.coeffs().iter().zip(u_h.coeffs()).map(|(a, b)| a - b).collect();
        let l2sq = dot(&e, &self.mass.matvec_complex(&e)).re.max(0.0);
        let semisq = dot(&e, &self.stiffness.matvec_complex(&e)).re.max(0.0);
        Ok(ErrorNorms { l2: l2sq.sqrt(), h1: (l2sq + semisq).sqrt(), h1_semi: semisq.sqrt() })
    }
}

pub fn error_norms(u_h: &FeField, u_ref: &FeField) -> Result<ErrorNorms> {
    ErrorMetric::new(Arc::clone(u_ref.space())).norms(u_h, u_ref)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    /// `c = Re(a) - 1` for `u_h = a u + v`.
    pub c: f64,
    pub v_norm: f64,
    pub overlap: Complex64,
    /// `‖u_h - u‖²_{L²}`
    pub error_sqr: f64,
}

/// Splits `u_h = a u + v` with `v` orthogonal to `u` in the complex `L²`
/// inner product and checks `Im a ≈ 0`, `Re a ≈ √(1 - ‖v‖²)` and
/// `|c| ≤ ‖u_h - u‖²`.
pub fn error_decomposition(u_h: &FeField, u: &FeField, mass: &CsrMatrix<f64>) -> Result<ErrorDecomposition> {
    let mu = mass.matvec_complex(u.coeffs());
    let a = dot(&mu, u_h.coeffs()); // ∫ u_h conj(u)
    let v: Vec<Complex64> = u_h.coeffs().iter().zip(u.coeffs()).map(|(x, y)| x - a * y).collect();
    let v_norm = dot(&v, &mass.matvec_complex(&v)).re.max(0.0).sqrt();
    let e: Vec<Complex64> = u_h.coeffs().iter().zip(u.coeffs()).map(|(x, y)| x - y).collect();
    let error_sqr = dot(&e, &mass.matvec_complex(&e)).re;
    let c = a.re - 1.0;
    let out = ErrorDecomposition { c, v_norm, overlap: a, error_sqr };
    if a.im.abs() > 1e-10 {
        return Err(Error::CheckFailed(format!("Im(a) = {:e} exceeds 1e-10; phases not aligned", a.im)));
    }
    let expected = (1.0 - v_norm * v_norm).max(0.0).sqrt();
    if (a.re - expected).abs() > 1e-10 {
        return Err(Error::CheckFailed(format!("Re(a) = {} but sqrt(1 - |v|^2) = {expected}", a.re)));
    }
    if c.abs() > error_sqr + 1e-14 {
        return Err(Error::CheckFailed(format!("|c| = {:e} exceeds |u_h - u|^2 = {error_sqr:e}", c.abs())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    /// `λ_h - λ`
    pub lhs: f64,
    /// `⟨(𝒜_{|u|} - λ)(u_h - u), u_h - u⟩ + β ((|u_h|² - |u|²) u_h, u_h)`
    pub rhs: f64,
    pub residual: f64,
}

/// Eigenvalue error identity for a coarse pair `(λ_h, u_h)` against a
/// reference pair `(λ, u)` on `ops`' space. `u_h` is prolongated and
/// phase-aligned to `u` first.
pub fn eigenvalue_identity_check(
    ops: &GpeOperators,
    lambda_h: f64,
    u_h: &FeField,
    lambda: f64,
    u: &FeField,
) -> Result<IdentityCheck> {
    let u_h = if u_h.space().same_space(ops.space()) { u_h.clone() } else { prolongate(u_h, ops.space())? };
    let (u_h, _) = phase_align(u, &u_h, ops.mass())?;
    let e = u_h.with_coeffs(u_h.coeffs().iter().zip(u.coeffs()).map(|(a, b)| a - b).collect());
    let ae = ops.apply_gpe_operator(u, &e);
    let quad = GpeOperators::pair(&ae, &e) - lambda * ops.mass_norm_sqr(&e);
    let nonlinear = ops.params().beta * (ops.quartic(&u_h) - ops.density_product(u, &u_h));
    let lhs = lambda_h - lambda;
    let rhs = quad + nonlinear;
    Ok(IdentityCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}
