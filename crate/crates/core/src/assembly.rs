//! Global matrices of the mass, stiffness, `R`-inner-product, direct energy
//! and density-weighted forms over the interior dofs of a space.
//!
//! Entry `(i, j)` of every matrix is the form evaluated with trial function
//! `φ_j` and test function `φ_i`, so `wᴴ A w` is the quadratic form of `w`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fespace::{FeField, FeSpace};
use crate::mesh::Point;
use crate::sparse::{CsrMatrix, Scalar, SparsityPattern};

/// Physical parameters of the rotating condensate with harmonic trap
/// `V(x) = ½ (γ_x² x₁² + γ_y² x₂²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub omega: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub half_width: f64,
}

impl ModelParams {
    /// `R = 6, Ω = 1.2, β = 100, γ = (0.9, 1.2)`.
    pub fn model1() -> Self {
        Self { beta: 100.0, omega: 1.2, gamma_x: 0.9, gamma_y: 1.2, half_width: 6.0 }
    }

    /// `R = 8, Ω = 1.1, β = 400, γ = (1.1, 0.9)`.
    pub fn model2() -> Self {
        Self { beta: 400.0, omega: 1.1, gamma_x: 1.1, gamma_y: 0.9, half_width: 8.0 }
    }

    /// Isotropic linear oscillator without rotation, `-Δ + ½|x|²`.
    pub fn oscillator(half_width: f64) -> Self {
        Self { beta: 0.0, omega: 0.0, gamma_x: 1.0, gamma_y: 1.0, half_width }
    }

    pub fn potential(&self, x: Point) -> f64 {
        0.5 * (self.gamma_x * self.gamma_x * x[0] * x[0] + self.gamma_y * self.gamma_y * x[1] * x[1])
    }

    /// `V_R = V - ¼ Ω² |x|²`
    pub fn modified_potential(&self, x: Point) -> f64 {
        self.potential(x) - 0.25 * self.omega * self.omega * (x[0] * x[0] + x[1] * x[1])
    }

    /// Coefficients of `x₁²` and `x₂²` in `V_R`.
    pub fn modified_potential_coefficients(&self) -> [f64; 2] {
        let w = 0.25 * self.omega * self.omega;
        [0.5 * self.gamma_x * self.gamma_x - w, 0.5 * self.gamma_y * self.gamma_y - w]
    }

    /// Whether `V_R ≥ 0` at every quadrature point of `space`, i.e. the
    /// trap dominates the centrifugal term.
    pub fn centrifugal_bound_holds(&self, space: &FeSpace) -> bool {
        (0..space.n_elements())
            .all(|t| (0..space.rule().len()).all(|q| self.modified_potential(space.quad_point(t, q)) >= 0.0))
    }

    /// Every violated constraint, one message each.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.beta >= 0.0) {
            problems.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.half_width > 0.0) {
            problems.push(format!("half_width must be > 0, got {}", self.half_width));
        }
        for (name, v) in [("omega", self.omega), ("gamma_x", self.gamma_x), ("gamma_y", self.gamma_y)] {
            if !v.is_finite() {
                problems.push(format!("{name} must be finite, got {v}"));
            }
        }
        problems
    }
}

/// Sparsity pattern of a space plus the value-array slot of every local
/// `(test, trial)` pair, so forms with the same pattern can be reassembled
/// without sorting.
#[derive(Debug, Clone)]
pub struct Assembler {
    space: Arc<FeSpace>,
    pattern: Arc<SparsityPattern>,
    slots: Vec<usize>,
}

const BOUNDARY: usize = usize::MAX;

impl Assembler {
    pub fn new(space: Arc<FeSpace>) -> Self {
        let nl = space.n_local();
        let idx = space.interior_index();
        let mut rows = vec![Vec::new(); space.n_interior()];
        for t in 0..space.n_elements() {
            let dofs = space.element_dofs(t);
            for &gi in dofs {
                if let Some(i) = idx[gi] {
                    rows[i].extend(dofs.iter().filter_map(|&gj| idx[gj]));
                }
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let mut slots = Vec::with_capacity(space.n_elements() * nl * nl);
        for t in 0..space.n_elements() {
            let dofs = space.element_dofs(t);
            for &gi in dofs {
                for &gj in dofs {
                    slots.push(match (idx[gi], idx[gj]) {
                        (Some(i), Some(j)) => pattern.find(i, j).expect("pattern covers element couplings"),
                        _ => BOUNDARY,
                    });
                }
            }
        }
        Self { space, pattern, slots }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Generic element loop. `local(t, q, x, dx, phi, grad, out)` adds the
    /// contribution of quadrature point `q` (physical point `x`, weight `dx`
    /// including the area) to the local matrix `out[i * n_local + j]`.
    pub fn assemble<T, F>(&self, mut local: F) -> CsrMatrix<T>
    where
        T: Scalar,
        F: FnMut(usize, usize, Point, f64, &[f64], &[[f64; 2]], &mut [T]),
    {
        let space = &*self.space;
        let nl = space.n_local();
        let table = space.table();
        let weights = space.rule().weights();
        let mut values = vec![T::zero(); self.pattern.nnz()];
        let mut element = vec![T::zero(); nl * nl];
        let mut grads = vec![[0.0; 2]; nl];
        for t in 0..space.n_elements() {
            let geo = space.geometry(t);
            element.iter_mut().for_each(|e| *e = T::zero());
            for (q, w) in weights.iter().enumerate() {
                table.gradients_at(q, geo, &mut grads);
                let x = space.quad_point(t, q);
                local(t, q, x, w * geo.area, table.values_at(q), &grads, &mut element);
            }
            let slots = &self.slots[t * nl * nl..(t + 1) * nl * nl];
            for (&s, &v) in slots.iter().zip(&element) {
                if s != BOUNDARY {
                    values[s] += v;
                }
            }
        }
        CsrMatrix::new(Arc::clone(&self.pattern), values)
    }

    pub fn mass(&self) -> CsrMatrix<f64> {
        let nl = self.space.n_local();
        self.assemble(|_, _, _, dx, phi, _, out: &mut [f64]| {
            for i in 0..nl {
                for j in 0..nl {
                    out[i * nl + j] += dx * phi[i] * phi[j];
                }
            }
        })
    }

    pub fn stiffness(&self) -> CsrMatrix<f64> {
        let nl = self.space.n_local();
        self.assemble(|_, _, _, dx, _, g, out: &mut [f64]| {
            for i in 0..nl {
                for j in 0..nl {
                    out[i * nl + j] += dx * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        })
    }

    /// `∫ ∇_R φ_j · conj(∇_R φ_i) + V_R φ_j φ_i` with
    /// `∇_R w = ∇w + i (Ω/2) R w`, `R(x) = (x₂, -x₁)`.
    pub fn r_form(&self, params: &ModelParams) -> CsrMatrix<Complex64> {
        let nl = self.space.n_local();
        let half = 0.5 * params.omega;
        let mut cov = vec![[Complex64::new(0.0, 0.0); 2]; nl];
        self.assemble(|_, _, x, dx, phi, g, out: &mut [Complex64]| {
            let r = [x[1], -x[0]];
            for k in 0..nl {
                cov[k] = [Complex64::new(g[k][0], half * r[0] * phi[k]), Complex64::new(g[k][1], half * r[1] * phi[k])];
            }
            let vr = params.modified_potential(x);
            for i in 0..nl {
                let ci = [cov[i][0].conj(), cov[i][1].conj()];
                for j in 0..nl {
                    let v = cov[j][0] * ci[0] + cov[j][1] * ci[1] + vr * phi[i] * phi[j];
                    out[i * nl + j] += v * dx;
                }
            }
        })
    }

    /// `-Ω conj(φ_i) L₃ φ_j` with `L₃ = -i (x₁ ∂₂ - x₂ ∂₁)`, assembled in the
    /// symmetrized form `½ [T_ij + conj(T_ji)]`.
    pub fn rotation_form(&self, omega: f64) -> CsrMatrix<Complex64> {
        let nl = self.space.n_local();
        let mut l3 = vec![0.0; nl];
        self.assemble(|_, _, x, dx, phi, g, out: &mut [Complex64]| {
            // L₃ φ = -i * l3
            for k in 0..nl {
                l3[k] = x[0] * g[k][1] - x[1] * g[k][0];
            }
            for i in 0..nl {
                for j in 0..nl {
                    // T_ij = -Ω φ_i (-i l3_j) = iΩ φ_i l3_j
                    let t_ij = Complex64::new(0.0, omega * phi[i] * l3[j]);
                    let t_ji = Complex64::new(0.0, omega * phi[j] * l3[i]);
                    out[i * nl + j] += 0.5 * (t_ij + t_ji.conj()) * dx;
                }
            }
        })
    }

    /// `∫ ∇φ_j · ∇φ_i + V φ_j φ_i - Ω φ_i L₃ φ_j`, the quadratic part of the
    /// energy in its original form.
    pub fn direct_form(&self, params: &ModelParams) -> CsrMatrix<Complex64> {
        let nl = self.space.n_local();
        let kinetic_potential: CsrMatrix<f64> = self.assemble(|_, _, x, dx, phi, g, out: &mut [f64]| {
            let v = params.potential(x);
            for i in 0..nl {
                for j in 0..nl {
                    out[i * nl + j] += dx * (g[i][0] * g[j][0] + g[i][1] * g[j][1] + v * phi[i] * phi[j]);
                }
            }
        });
        let rotation = self.rotation_form(params.omega);
        let values = kinetic_potential
            .values()
            .iter()
            .zip(rotation.values())
            .map(|(&a, &b)| Complex64::new(a, 0.0) + b)
            .collect();
        CsrMatrix::new(Arc::clone(&self.pattern), values)
    }

    /// `∫ w(x) φ_j φ_i` for a weight given at the quadrature points,
    /// `weight[t * n_quad + q]`.
    pub fn weighted_mass_from(&self, weight: &[f64]) -> CsrMatrix<f64> {
        let nl = self.space.n_local();
        let nq = self.space.rule().len();
        assert_eq!(weight.len(), self.space.n_elements() * nq);
        self.assemble(|t, q, _, dx, phi, _, out: &mut [f64]| {
            let wq = weight[t * nq + q] * dx;
            if wq != 0.0 {
                for i in 0..nl {
                    for j in 0..nl {
                        out[i * nl + j] += wq * phi[i] * phi[j];
                    }
                }
            }
        })
    }

    /// `∫ |u|² φ_j φ_i`.
    pub fn weighted_mass(&self, density: &FeField) -> CsrMatrix<f64> {
        let w: Vec<f64> = quad_values(density).iter().map(|v| v.norm_sqr()).collect();
        self.weighted_mass_from(&w)
    }
}

/// Field values at every quadrature point, indexed `t * n_quad + q`.
pub fn quad_values(field: &FeField) -> Vec<Complex64> {
    let space = &**field.space();
    let nl = space.n_local();
    let nq = space.rule().len();
    let table = space.table();
    let mut out = Vec::with_capacity(space.n_elements() * nq);
    let mut local = [Complex64::new(0.0, 0.0); 6];
    for t in 0..space.n_elements() {
        space.gather(t, field.coeffs(), &mut local[..nl]);
        for q in 0..nq {
            let phi = table.values_at(q);
            let mut v = Complex64::new(0.0, 0.0);
            for i in 0..nl {
                v += local[i] * phi[i];
            }
            out.push(v);
        }
    }
    out
}

pub fn assemble_mass(space: &Arc<FeSpace>) -> CsrMatrix<f64> {
    Assembler::new(Arc::clone(space)).mass()
}

pub fn assemble_stiffness(space: &Arc<FeSpace>) -> CsrMatrix<f64> {
    Assembler::new(Arc::clone(space)).stiffness()
}

/// Warns (and still assembles) when the centrifugal bound fails.
pub fn assemble_r_form(space: &Arc<FeSpace>, params: &ModelParams) -> CsrMatrix<Complex64> {
    warn_if_indefinite(space, params);
    Assembler::new(Arc::clone(space)).r_form(params)
}

pub(crate) fn warn_if_indefinite(space: &FeSpace, params: &ModelParams) {
    if !params.centrifugal_bound_holds(space) {
        tracing::warn!(
            omega = params.omega,
            gamma_x = params.gamma_x,
            gamma_y = params.gamma_y,
            "V - Ω²|x|²/4 is negative somewhere; the R-form may be indefinite"
        );
    }
}

pub fn assemble_direct_form(space: &Arc<FeSpace>, params: &ModelParams) -> CsrMatrix<Complex64> {
    Assembler::new(Arc::clone(space)).direct_form(params)
}

pub fn assemble_weighted_mass(space: &Arc<FeSpace>, density: &FeField) -> CsrMatrix<f64> {
    Assembler::new(Arc::clone(space)).weighted_mass(density)
}
