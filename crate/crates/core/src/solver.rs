//! Riemannian gradient descent on the discrete `L²` unit sphere.
//!
//! Each step solves `𝒜_{|u|} g = 𝒜_{|u|} u - λ M u` (a Sobolev gradient in
//! the metric `⟨𝒜_{|u|}·,·⟩`), projects `g` onto the tangent space at `u`
//! and retracts by normalization. The step size starts at one, is halved
//! until the energy does not increase and grows by a fixed factor after
//! every accepted step. The iteration stops once two consecutive energies
//! differ by less than `energy_tol`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{quad_values, ModelParams};
use crate::error::{Error, Result};
use crate::fespace::{FeField, FeSpace};
use crate::model::{normalize, GpeOperators};
use crate::sparse::{dot, solve_hpd_from, CgOptions, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub energy_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub growth: f64,
    /// Relative residual target of the inner gradient solve.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Seeds the random start used when the given start has zero norm.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            energy_tol: 1e-10,
            max_iter: 20_000,
            initial_step: 1.0,
            backtrack: 0.5,
            growth: 1.1,
            inner_tol: 1e-10,
            inner_max_iter: 20_000,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// All violated constraints, one message each.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.energy_tol > 0.0) {
            errs.push(format!("solver.energy_tol must be positive, got {}", self.energy_tol));
        }
        if self.max_iter == 0 {
            errs.push("solver.max_iter must be at least 1".into());
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            errs.push(format!("solver.initial_step must lie in (0, 1], got {}", self.initial_step));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            errs.push(format!("solver.backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.growth > 1.0 && self.growth < 2.0) {
            errs.push(format!("solver.growth must lie in (1, 2), got {}", self.growth));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol < 1.0) {
            errs.push(format!("solver.inner_tol must lie in (0, 1), got {}", self.inner_tol));
        }
        if self.inner_max_iter == 0 {
            errs.push("solver.inner_max_iter must be at least 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateResult {
    /// Unit `M`-norm state.
    pub u: FeField,
    pub lambda: f64,
    pub energy: f64,
    pub iterations: usize,
    /// Energy of the start followed by the energy after every accepted step;
    /// later entries accumulate the computed energy changes.
    pub energy_history: Vec<f64>,
    pub final_step: f64,
    /// `‖𝒜_{|u|}u - λMu‖` in the dual norm of `⟨𝒜_{|u|}·,·⟩`.
    pub residual_norm: f64,
    /// The same residual in the Euclidean norm of the coefficients.
    pub residual_euclidean: f64,
}

/// Per-step diagnostics handed to an observer.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub iteration: usize,
    pub energy: f64,
    pub step: f64,
    /// `|Re(uᴴ M d)| / ‖d‖` of the search direction.
    pub tangent_defect: f64,
    /// `|uᴴ M u - 1|` of the accepted iterate.
    pub sphere_defect: f64,
    pub inner_iterations: usize,
}

/// Normalized interpolant of `(Ω/√π)(x₁ + i x₂) e^{-|x|²/2}`, or of the
/// Gaussian `e^{-|x|²/2}` when `Ω = 0`.
pub fn initial_guess(space: &Arc<FeSpace>, params: &ModelParams, mass: &CsrMatrix<f64>) -> Result<FeField> {
    let omega = params.omega;
    let u0 = if omega != 0.0 {
        let c = omega / PI.sqrt();
        FeField::interpolate(Arc::clone(space), |x| {
            Complex64::new(x[0], x[1]) * (c * (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp())
        })?
    } else {
        FeField::interpolate(Arc::clone(space), |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp(), 0.0))?
    };
    normalize(&u0, mass)
}

pub fn solve_ground_state(ops: &GpeOperators, config: &SolverConfig, start: &FeField) -> Result<GroundStateResult> {
    solve_ground_state_observed(ops, config, start, &mut |_| {})
}

pub fn solve_ground_state_observed(
    ops: &GpeOperators,
    config: &SolverConfig,
    start: &FeField,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<GroundStateResult> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidArgument(errs.join("; ")));
    }
    let mass = ops.mass();
    let mut u = match normalize(start, mass) {
        Ok(u) => u,
        Err(Error::ZeroNorm) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let c = (0..start.coeffs().len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            normalize(&FeField::new(Arc::clone(start.space()), c)?, mass)?
        }
        Err(e) => return Err(e),
    };
    let inner = CgOptions { tol: config.inner_tol, max_iter: config.inner_max_iter };
    let mut energy = ops.energy(&u);
    let mut history = vec![energy];
    let mut tau = config.initial_step;
    let mut g_prev: Option<Vec<Complex64>> = None;

    for iteration in 1..=config.max_iter {
        let lin = ops.linearized(&u);
        let au = lin.matrix.matvec(u.coeffs())?;
        let mu = mass.matvec_complex(u.coeffs());
        let m_uu = dot(u.coeffs(), &mu).re;
        let lambda = dot(u.coeffs(), &au).re / m_uu;
        let r: Vec<Complex64> = au.iter().zip(&mu).map(|(a, m)| a - m * lambda).collect();
        let x0 = g_prev.take().unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); r.len()]);
        let solve = solve_hpd_from(&lin.matrix, &r, x0, inner, None)?;
        let g = solve.x;
        let along = dot(&mu, &g).re / m_uu;
        let d = u.with_coeffs(g.iter().zip(u.coeffs()).map(|(gi, ui)| gi - ui * along).collect());
        let d_norm = d.coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let tangent_defect = if d_norm > 0.0 { dot(&mu, d.coeffs()).re.abs() / d_norm } else { 0.0 };
        let line = LineData::new(ops, &u, &d, m_uu);

        // Backtracking on the retraction u(τ) = normalize(u - τ d).
        let delta = loop {
            let delta = line.energy_change(tau);
            if delta <= 0.0 {
                break delta;
            }
            tau *= config.backtrack;
            if tau < 1e-12 {
                return Err(Error::StepUnderflow { iteration, energy_history: history });
            }
        };
        let next = u.with_coeffs(u.coeffs().iter().zip(d.coeffs()).map(|(ui, di)| ui - di * tau).collect());
        u = normalize(&next, mass)?;
        energy += delta;
        history.push(energy);
        g_prev = Some(g);
        let sphere_defect = (ops.mass_norm_sqr(&u) - 1.0).abs();
        observer(&StepInfo {
            iteration,
            energy,
            step: tau,
            tangent_defect,
            sphere_defect,
            inner_iterations: solve.iterations,
        });
        let change = delta.abs();
        if iteration % 100 == 0 {
            tracing::info!(iteration, energy, step = tau, change, "gradient iteration");
        } else {
            tracing::debug!(iteration, energy, step = tau, change, inner = solve.iterations, "gradient iteration");
        }
        let used = tau;
        tau = (tau * config.growth).min(1.0);
        if change < config.energy_tol {
            return finish(ops, u, history, iteration, used, inner, g_prev);
        }
    }
    let last_change = match history.as_slice() {
        [.., a, b] => (a - b).abs(),
        _ => f64::NAN,
    };
    Err(Error::MaxIterations { max_iter: config.max_iter, last_change, energy_history: history })
}

/// Scalars of one search line from which the energy change along
/// `normalize(u - τ d)` is evaluated without cancellation: only the small
/// differences between the candidate and `u` are ever formed.
struct LineData {
    beta: f64,
    m_uu: f64,
    m_ud: f64,
    m_dd: f64,
    a_uu: f64,
    a_ud: f64,
    a_dd: f64,
    q_uu: f64,
    /// Per quadrature point: `dx`, `|u|²`, `Re(u d̄)`, `|d|²`.
    points: Vec<[f64; 4]>,
}

impl LineData {
    fn new(ops: &GpeOperators, u: &FeField, d: &FeField, m_uu: f64) -> Self {
        let ar_u = ops.r_form().matvec(u.coeffs()).expect("same space");
        let ar_d = ops.r_form().matvec(d.coeffs()).expect("same space");
        let md = ops.mass().matvec_complex(d.coeffs());
        let uq = quad_values(u);
        let dq = quad_values(d);
        let points: Vec<[f64; 4]> = ops
            .quad_weights()
            .iter()
            .zip(uq.iter().zip(&dq))
            .map(|(&dx, (uv, dv))| [dx, uv.norm_sqr(), (uv * dv.conj()).re, dv.norm_sqr()])
            .collect();
        Self {
            beta: ops.params().beta,
            m_uu,
            m_ud: dot(u.coeffs(), &md).re,
            m_dd: dot(d.coeffs(), &md).re,
            a_uu: dot(u.coeffs(), &ar_u).re,
            a_ud: dot(d.coeffs(), &ar_u).re,
            a_dd: dot(d.coeffs(), &ar_d).re,
            q_uu: points.iter().map(|p| p[0] * p[1] * p[1]).sum(),
            points,
        }
    }

    /// `E(w/‖w‖) - E(u/‖u‖)` for `w = u - τ d`.
    fn energy_change(&self, tau: f64) -> f64 {
        let dm = -2.0 * tau * self.m_ud + tau * tau * self.m_dd;
        let da = -2.0 * tau * self.a_ud + tau * tau * self.a_dd;
        let m_ww = self.m_uu + dm;
        let quadratic = 0.5 * (da * self.m_uu - self.a_uu * dm) / (m_ww * self.m_uu);
        if self.beta == 0.0 {
            return quadratic;
        }
        let dq: f64 = self
            .points
            .iter()
            .map(|&[dx, uu, ud, dd]| {
                let diff = -2.0 * tau * ud + tau * tau * dd;
                dx * diff * (2.0 * uu + diff)
            })
            .sum();
        let quartic = (dq * self.m_uu * self.m_uu - self.q_uu * dm * (m_ww + self.m_uu))
            / (m_ww * m_ww * self.m_uu * self.m_uu);
        quadratic + 0.25 * self.beta * quartic
    }
}

fn finish(
    ops: &GpeOperators,
    u: FeField,
    energy_history: Vec<f64>,
    iterations: usize,
    final_step: f64,
    inner: CgOptions,
    warm: Option<Vec<Complex64>>,
) -> Result<GroundStateResult> {
    let lambda = ops.rayleigh_lambda(&u)?;
    let (residual_norm, residual_euclidean) = dual_residual(ops, &u, lambda, inner, warm)?;
    let energy = ops.energy(&u);
    Ok(GroundStateResult { u, lambda, energy, iterations, energy_history, final_step, residual_norm, residual_euclidean })
}

/// Dual and Euclidean norms of `𝒜_{|u|}u - λMu`.
pub fn dual_residual(
    ops: &GpeOperators,
    u: &FeField,
    lambda: f64,
    inner: CgOptions,
    warm: Option<Vec<Complex64>>,
) -> Result<(f64, f64)> {
    let lin = ops.linearized(u);
    let au = lin.matrix.matvec(u.coeffs())?;
    let mu = ops.mass().matvec_complex(u.coeffs());
    let r: Vec<Complex64> = au.iter().zip(&mu).map(|(a, m)| a - m * lambda).collect();
    let euclid = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let x0 = warm.unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); r.len()]);
    let g = solve_hpd_from(&lin.matrix, &r, x0, inner, None)?.x;
    Ok((dot(&r, &g).re.max(0.0).sqrt(), euclid))
}

/// Writes `lambda energy iterations residual`.
pub fn write_summary<W: std::io::Write>(result: &GroundStateResult, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "{:.16e} {:.16e} {} {:.6e}",
        result.lambda, result.energy, result.iterations, result.residual_norm
    )
}
