//! TOML run configuration.
//!
//! ```toml
//! [domain]
//! half_width = 6.0
//!
//! [mesh]
//! subdivisions = 64   # default 64
//! order = 1           # 1 or 2, default 1
//!
//! [model]
//! beta = 100.0
//! omega = 1.2
//! gamma_x = 0.9
//! gamma_y = 1.2
//!
//! [solver]            # optional, defaults shown
//! energy_tol = 1e-10
//! max_iter = 20000
//!
//! [spectrum]          # optional
//! count = 15
//!
//! [study]             # required by `convergence`
//! levels = [16, 32, 64, 128]
//! reference = 256
//! ```
//!
//! Unknown keys are rejected. `[domain]` and `[model]` have no defaults.

use std::path::Path;

use rotgpe::assembly::ModelParams;
use rotgpe::convergence::StudyConfig;
use rotgpe::solver::SolverConfig;
use rotgpe::spectrum::SpectrumConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mesh {
    pub subdivisions: usize,
    pub order: usize,
}

impl Default for Mesh {
    fn default() -> Self {
        Self { subdivisions: 64, order: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub beta: f64,
    pub omega: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub levels: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Domain,
    #[serde(default)]
    pub mesh: Mesh,
    pub model: Model,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    pub study: Option<Study>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
        Self::parse(&text)
    }

    /// Parses and validates; every violated constraint is reported.
    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| vec![e.to_string().trim_end().to_string()])?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(errs)
        }
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            beta: self.model.beta,
            omega: self.model.omega,
            gamma_x: self.model.gamma_x,
            gamma_y: self.model.gamma_y,
            half_width: self.domain.half_width,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs: Vec<String> = self.params().validate().into_iter().map(|e| format!("model/domain: {e}")).collect();
        if self.mesh.subdivisions < 2 {
            errs.push(format!("mesh.subdivisions must be at least 2, got {}", self.mesh.subdivisions));
        }
        if !(1..=2).contains(&self.mesh.order) {
            errs.push(format!("mesh.order must be 1 or 2, got {}", self.mesh.order));
        }
        errs.extend(self.solver.validate());
        errs.extend(self.spectrum.validate());
        if let Some(study) = self.study_config() {
            errs.extend(study.validate_levels());
        }
        errs
    }

    pub fn study_config(&self) -> Option<StudyConfig> {
        self.study.as_ref().map(|s| StudyConfig {
            params: self.params(),
            order: self.mesh.order,
            levels: s.levels.clone(),
            reference: s.reference,
            solver: self.solver,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL1: &str = r#"
[domain]
half_width = 6.0

[mesh]
subdivisions = 32

[model]
beta = 100.0
omega = 1.2
gamma_x = 0.9
gamma_y = 1.2
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::parse(MODEL1).unwrap();
        assert_eq!(cfg.params(), ModelParams::model1());
        assert_eq!(cfg.mesh.order, 1);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.spectrum.count, 15);
        assert!(cfg.study.is_none());
    }

    #[test]
    fn missing_key_is_named() {
        let text = MODEL1.replace("gamma_y = 1.2\n", "");
        let errs = RunConfig::parse(&text).unwrap_err();
        assert!(errs[0].contains("gamma_y"), "{errs:?}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MODEL1.replace("omega = 1.2", "omega = 1.2\nomgea = 1.0");
        let errs = RunConfig::parse(&text).unwrap_err();
        assert!(errs[0].contains("omgea"), "{errs:?}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = MODEL1.replace("beta = 100.0", "beta = -1.0").replace("subdivisions = 32", "subdivisions = 1\norder = 3")
            + "[solver]\nenergy_tol = 0.0\n[study]\nlevels = []\nreference = 8\n";
        let errs = RunConfig::parse(&text).unwrap_err();
        assert_eq!(errs.len(), 5, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("study.levels")));
    }
}
