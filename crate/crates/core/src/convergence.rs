//! Mesh-refinement studies against a self-computed reference solution.
//!
//! Levels are solved from coarse to fine: the coarsest level starts from the
//! vortex ansatz, every further level (the reference last) from the
//! prolongated solution of the level below it. This keeps all levels in the
//! basin of one minimizer.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::ModelParams;
use crate::error::{Error, Result};
use crate::fespace::{FeField, FeSpace};
use crate::mesh::MeshGrid;
use crate::model::{normalize, phase_align, prolongate, ErrorMetric, GpeOperators};
use crate::solver::{initial_guess, solve_ground_state, GroundStateResult, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub params: ModelParams,
    pub order: usize,
    /// Coarse subdivision counts, ascending.
    pub levels: Vec<usize>,
    pub reference: usize,
    pub solver: SolverConfig,
}

impl StudyConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.params.validate();
        errs.extend(self.solver.validate());
        if !(1..=2).contains(&self.order) {
            errs.push(format!("order must be 1 or 2, got {}", self.order));
        }
        errs.extend(self.validate_levels());
        errs
    }

    /// Checks of the level list and the reference only.
    pub fn validate_levels(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let Some(&coarsest) = self.levels.first() else {
            errs.push("study.levels must not be empty".into());
            return errs;
        };
        let power_of_two_multiple = |n: usize| n >= coarsest && n % coarsest == 0 && (n / coarsest).is_power_of_two();
        if coarsest < 2 {
            errs.push(format!("study.levels entries must be at least 2, got {coarsest}"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            errs.push(format!("study.levels must be strictly ascending, got {:?}", self.levels));
        }
        for &n in &self.levels {
            if !power_of_two_multiple(n) {
                errs.push(format!("study.levels entry {n} is not {coarsest} times a power of two"));
            }
        }
        let finest = *self.levels.last().unwrap();
        if self.reference <= finest || !power_of_two_multiple(self.reference) {
            errs.push(format!(
                "study.reference = {} must be {coarsest} times a power of two and finer than {finest}",
                self.reference
            ));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub subdivisions: usize,
    pub h: f64,
    pub err_l2: f64,
    /// Full `H¹` norm.
    pub err_h1: f64,
    pub err_h1_semi: f64,
    /// `E(u_h) - E(u_ref)`
    pub err_energy: f64,
    /// `|λ_h - λ_ref|`
    pub err_lambda: f64,
    /// `L²` error without phase alignment.
    pub err_l2_unaligned: f64,
    pub energy: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    /// `|∫ u_h conj(u_ref)|`
    pub overlap: f64,
    /// Set when the level looks like a different minimizer than the
    /// reference: small overlap, or an error that does not decrease.
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EocColumns {
    pub l2: Vec<Option<f64>>,
    pub h1: Vec<Option<f64>>,
    pub energy: Vec<Option<f64>>,
    pub lambda: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub subdivisions: usize,
    pub h: f64,
    pub energy: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    /// Ordered by decreasing `h`.
    pub rows: Vec<LevelRow>,
    /// Between consecutive rows.
    pub eoc: EocColumns,
    /// Least-squares slope of `log e` against `log h` over all rows.
    pub fitted: EocColumns,
    pub reference: ReferenceInfo,
}

/// Table plus the solved reference, for callers that need the state.
#[derive(Debug)]
pub struct Study {
    pub table: ConvergenceTable,
    /// Coarse level solutions, in the order of `levels`.
    pub levels: Vec<GroundStateResult>,
    pub reference: GroundStateResult,
    pub reference_ops: GpeOperators,
}

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; `None` where an error is zero.
pub fn compute_eoc(h: &[f64], err: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(h.len(), err.len());
    h.windows(2)
        .zip(err.windows(2))
        .map(|(h, e)| (e[0] > 0.0 && e[1] > 0.0).then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()))
        .collect()
}

/// Slope of the least-squares line through `(log h, log e)`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> Option<f64> {
    if h.len() < 2 || err.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn space(params: &ModelParams, n: usize, order: usize) -> Result<Arc<FeSpace>> {
    FeSpace::new(MeshGrid::uniform(params.half_width, n)?, order)
}

pub fn run_study(config: &StudyConfig) -> Result<Study> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidArgument(errs.join("; ")));
    }
    let mut solved: Vec<GroundStateResult> = Vec::new();
    let mut previous: Option<FeField> = None;
    for &n in config.levels.iter().chain(std::iter::once(&config.reference)) {
        let level = |e: Error| Error::Level { subdivisions: n, source: Box::new(e) };
        let s = space(&config.params, n, config.order).map_err(level)?;
        let ops = GpeOperators::new(Arc::clone(&s), config.params);
        let start = match &previous {
            None => initial_guess(&s, &config.params, ops.mass()),
            Some(u) => prolongate(u, &s).and_then(|p| normalize(&p, ops.mass())),
        }
        .map_err(level)?;
        let res = solve_ground_state(&ops, &config.solver, &start).map_err(level)?;
        tracing::info!(n, energy = res.energy, lambda = res.lambda, iterations = res.iterations, "level solved");
        previous = Some(res.u.clone());
        if n == config.reference {
            let table = tabulate(config, &solved, &res, &ops)?;
            return Ok(Study { table, levels: solved, reference: res, reference_ops: ops });
        }
        solved.push(res);
    }
    unreachable!("the reference level ends the loop")
}

fn tabulate(
    config: &StudyConfig,
    levels: &[GroundStateResult],
    reference: &GroundStateResult,
    ops: &GpeOperators,
) -> Result<ConvergenceTable> {
    let metric = ErrorMetric::from_operators(ops);
    let ref_space = ops.space();
    let mut rows: Vec<LevelRow> = Vec::new();
    for (res, &n) in levels.iter().zip(&config.levels) {
        let level = |e: Error| Error::Level { subdivisions: n, source: Box::new(e) };
        let fine = prolongate(&res.u, ref_space).map_err(level)?;
        let (aligned, _) = phase_align(&fine, &reference.u, ops.mass()).map_err(level)?;
        let norms = metric.norms(&fine, &aligned).map_err(level)?;
        let unaligned = metric.norms(&fine, &reference.u).map_err(level)?;
        let overlap = crate::sparse::dot(reference.u.coeffs(), &ops.mass().matvec_complex(fine.coeffs())).norm();
        let anomalous = overlap < 0.9 || rows.last().is_some_and(|prev| norms.l2 >= prev.err_l2);
        if anomalous {
            tracing::warn!(n, overlap, err_l2 = norms.l2, "level may sit in a different minimizer than the reference");
        }
        rows.push(LevelRow {
            subdivisions: n,
            h: res.u.space().mesh().mesh_size(),
            err_l2: norms.l2,
            err_h1: norms.h1,
            err_h1_semi: norms.h1_semi,
            err_energy: res.energy - reference.energy,
            err_lambda: (res.lambda - reference.lambda).abs(),
            err_l2_unaligned: unaligned.l2,
            energy: res.energy,
            lambda: res.lambda,
            iterations: res.iterations,
            residual_norm: res.residual_norm,
            overlap,
            anomalous,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let column = |f: fn(&LevelRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (l2, h1) = (column(|r| r.err_l2), column(|r| r.err_h1));
    let (energy, lambda) = (column(|r| r.err_energy.abs()), column(|r| r.err_lambda));
    let eoc = EocColumns {
        l2: compute_eoc(&h, &l2),
        h1: compute_eoc(&h, &h1),
        energy: compute_eoc(&h, &energy),
        lambda: compute_eoc(&h, &lambda),
    };
    let fitted = EocColumns {
        l2: vec![fitted_order(&h, &l2)],
        h1: vec![fitted_order(&h, &h1)],
        energy: vec![fitted_order(&h, &energy)],
        lambda: vec![fitted_order(&h, &lambda)],
    };
    let reference = ReferenceInfo {
        subdivisions: config.reference,
        h: ref_space.mesh().mesh_size(),
        energy: reference.energy,
        lambda: reference.lambda,
        iterations: reference.iterations,
        residual_norm: reference.residual_norm,
    };
    Ok(ConvergenceTable { rows, eoc, fitted, reference })
}

fn fmt_eoc(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl ConvergenceTable {
    /// Header `h,errL2,errH1,errEnergy,errLambda`, one row per level, then
    /// `eoc,` rows: one per consecutive pair (labelled by the finer `h`) and
    /// a final `eoc,fit` row with the least-squares slopes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "h,errL2,errH1,errEnergy,errLambda")?;
        for r in &self.rows {
            writeln!(out, "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}", r.h, r.err_l2, r.err_h1, r.err_energy, r.err_lambda)?;
        }
        for (i, r) in self.rows.iter().enumerate().skip(1) {
            writeln!(
                out,
                "eoc,{:.10e},{},{},{},{}",
                r.h,
                fmt_eoc(self.eoc.l2[i - 1]),
                fmt_eoc(self.eoc.h1[i - 1]),
                fmt_eoc(self.eoc.energy[i - 1]),
                fmt_eoc(self.eoc.lambda[i - 1])
            )?;
        }
        writeln!(
            out,
            "eoc,fit,{},{},{},{}",
            fmt_eoc(self.fitted.l2[0]),
            fmt_eoc(self.fitted.h1[0]),
            fmt_eoc(self.fitted.energy[0]),
            fmt_eoc(self.fitted.lambda[0])
        )
    }

    /// JSON sidecar: the table, the full config and the solve order.
    pub fn write_metadata<W: Write>(&self, config: &StudyConfig, out: W) -> std::io::Result<()> {
        let meta = serde_json::json!({
            "config": config,
            "strategy": {
                "order": "coarse levels ascending, then the reference",
                "warm_start": "coarsest level from the vortex ansatz, every later level from the prolongated solution of the level below",
                "phase": "reference rotated onto each prolongated coarse solution before measuring errors",
                "h1": "full H1 norm; the seminorm is listed per row as err_h1_semi",
            },
            "table": self,
        });
        serde_json::to_writer_pretty(out, &meta).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_arithmetic() {
        assert_eq!(compute_eoc(&[1.0, 0.5], &[1.0, 0.25]), vec![Some(2.0)]);
        assert_eq!(compute_eoc(&[1.0, 0.5], &[1.0, 0.5]), vec![Some(1.0)]);
        assert_eq!(compute_eoc(&[1.0, 0.25], &[1.0, 0.0625]), vec![Some(2.0)]);
        assert_eq!(compute_eoc(&[1.0, 0.5], &[0.4, 0.1]), vec![Some(2.0)]);
        assert_eq!(compute_eoc(&[1.0, 0.5], &[1.0, 0.0]), vec![None]);
        let fit = fitted_order(&[1.0, 0.5, 0.25], &[3.0, 0.75, 0.1875]).unwrap();
        assert!((fit - 2.0).abs() < 1e-14);
        assert_eq!(fitted_order(&[1.0, 0.5], &[1.0, 0.0]), None);
    }

    fn oscillator_config(levels: Vec<usize>, reference: usize) -> StudyConfig {
        StudyConfig {
            params: ModelParams::oscillator(6.0),
            order: 1,
            levels,
            reference,
            solver: SolverConfig { energy_tol: 1e-14, ..Default::default() },
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = oscillator_config(vec![], 8);
        assert_eq!(cfg.validate(), vec!["study.levels must not be empty".to_string()]);
        cfg.levels = vec![4, 12, 8];
        cfg.reference = 8;
        cfg.order = 3;
        let errs = cfg.validate();
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn reference_as_finest_level_has_zero_error() {
        let cfg = oscillator_config(vec![4, 8], 16);
        let study = run_study(&cfg).unwrap();
        for r in &study.table.rows {
            assert!(r.err_l2 <= r.err_l2_unaligned + 1e-15);
            assert!(r.err_energy >= 0.0);
            assert!(!r.anomalous);
        }
        let mut with_ref = study.levels.clone();
        with_ref.push(study.reference.clone());
        let cfg_ref = StudyConfig { levels: vec![4, 8, 16], ..cfg.clone() };
        let t = tabulate(&cfg_ref, &with_ref, &study.reference, &study.reference_ops).unwrap();
        let last = t.rows.last().unwrap();
        assert_eq!((last.err_l2, last.err_h1, last.err_energy, last.err_lambda), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(t.eoc.l2[1], None);

        let mut csv = Vec::new();
        study.table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("h,errL2,errH1,errEnergy,errLambda\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("eoc,")).count(), 2);
        let mut json = Vec::new();
        study.table.write_metadata(&cfg, &mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["config"]["reference"], 16);
    }

    #[test]
    fn linear_oscillator_rates() {
        let cfg = oscillator_config(vec![8, 16, 32], 64);
        let t = run_study(&cfg).unwrap().table;
        let fit = |c: &Vec<Option<f64>>| c[0].unwrap();
        assert!((1.8..=2.2).contains(&fit(&t.fitted.l2)), "{:?}", t.fitted);
        assert!((0.8..=1.2).contains(&fit(&t.fitted.h1)), "{:?}", t.fitted);
        assert!((1.8..=2.2).contains(&fit(&t.fitted.lambda)), "{:?}", t.fitted);
    }
}
