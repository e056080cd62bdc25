//! Experiment configs: flat `key = value` sections in TOML syntax.
//!
//! ```text
//! [experiment]
//! name = "sphere-entropy"
//! job = "entropy"            # entropy | flow | spectrum | variations | lojasiewicz | isd
//! backend = "warped"         # warped | homogeneous
//!
//! [geometry]
//! dim = 2                    # warped: manifold dimension
//! cells = 400                # warped: radial cells
//! radius = 1.0               # warped: round radius before perturbation
//! factors = [2, 2]           # homogeneous: sphere factor dimensions
//! scales = [1.0, 1.0]        # homogeneous: optional factor scales
//! soliton_tau = 0.5          # homogeneous: optional, build the soliton at this tau
//!
//! [perturbation]
//! shape = "none"             # none | bump | tensor | random | asymmetry
//! amplitude = 0.0
//! seed = 0
//!
//! [solver]
//! tol = 1e-9
//! flow = "modified_tau"      # normalized | tau | modified_tau
//! horizon = 10.0
//! flow_tol = 1e-6
//! curvature_ceiling = 1e4
//! max_steps = 100000
//! trials = 20
//! growth_window = 0.02
//! keep = 8
//!
//! [expect]
//! nu = "-0.3068528194400547 +- 1e-6"
//! ```

use crate::error::{CliError, Result};
use crate::expect::Expectation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soliton_lab::homogeneous::FlowKind;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Job {
    Entropy,
    Flow,
    Spectrum,
    Variations,
    Lojasiewicz,
    Isd,
}

impl Job {
    pub fn name(self) -> &'static str {
        match self {
            Job::Entropy => "entropy",
            Job::Flow => "flow",
            Job::Spectrum => "spectrum",
            Job::Variations => "variations",
            Job::Lojasiewicz => "lojasiewicz",
            Job::Isd => "isd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Warped,
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    None,
    /// `phi = r sin + amplitude sin 2r sin^2 r` (warped).
    Bump,
    /// `g + amplitude h` with a fixed smooth invariant `h` (warped).
    Tensor,
    /// `g + amplitude h` with `h` drawn from `seed` (warped), or random factor
    /// scales `x_i (1 + amplitude u_i)` (homogeneous).
    Random,
    /// Factor scales `x_i (1 +- amplitude)` with alternating signs (homogeneous).
    Asymmetry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub job: Job,
    pub backend: Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub dim: Option<usize>,
    pub cells: Option<usize>,
    #[serde(default = "one")]
    pub radius: f64,
    pub factors: Option<Vec<usize>>,
    pub scales: Option<Vec<f64>>,
    pub soliton_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    #[serde(default)]
    pub shape: Shape,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub flow: FlowKind,
    pub horizon: f64,
    pub flow_tol: f64,
    pub curvature_ceiling: f64,
    pub max_steps: usize,
    pub trials: usize,
    pub growth_window: f64,
    pub keep: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            flow: FlowKind::ModifiedTau,
            horizon: 10.0,
            flow_tol: 1e-6,
            curvature_ceiling: 1e4,
            max_steps: 100_000,
            trials: 20,
            growth_window: 0.02,
            keep: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Quantity name to expectation text.
    #[serde(default)]
    pub expect: BTreeMap<String, String>,
}

fn one() -> f64 {
    1.0
}

/// 1-based line of byte offset `at`.
fn line_of(text: &str, at: usize) -> usize {
    text[..at.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of `key` inside `[section]`, if present.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            let k = line.split('=').next().unwrap_or("").trim().trim_matches('"');
            if k == key {
                return Some(i + 1);
            }
        }
    }
    None
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
            field: "syntax".into(),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(section, key, message)| CliError::Config {
            path: origin.to_string(),
            line: locate(text, section, &key).or_else(|| locate_section(text, section)),
            field: format!("{section}.{key}"),
            message,
        })?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String, String)> {
        let bad = |section: &'static str, key: &str, msg: String| Err((section, key.to_string(), msg));
        if self.experiment.name.is_empty() || self.experiment.name.contains(['/', '\\']) || self.experiment.name.starts_with('.') {
            return bad("experiment", "name", format!("`{}` is not a usable directory name", self.experiment.name));
        }
        let g = &self.geometry;
        match self.experiment.backend {
            Backend::Warped => {
                match g.dim {
                    Some(n) if n >= 2 => {}
                    Some(n) => return bad("geometry", "dim", format!("dimension must be at least 2, got {n}")),
                    None => return bad("geometry", "dim", "required for the warped backend".into()),
                }
                match g.cells {
                    Some(m) if m >= soliton_lab::geometry::MIN_CELLS => {}
                    Some(m) => return bad("geometry", "cells", format!("need at least {} cells, got {m}", soliton_lab::geometry::MIN_CELLS)),
                    None => return bad("geometry", "cells", "required for the warped backend".into()),
                }
                if !(g.radius > 0.0 && g.radius.is_finite()) {
                    return bad("geometry", "radius", format!("must be positive, got {}", g.radius));
                }
                if matches!(self.perturbation.shape, Shape::Asymmetry) {
                    return bad("perturbation", "shape", "asymmetry applies to the homogeneous backend".into());
                }
            }
            Backend::Homogeneous => {
                let Some(f) = &g.factors else {
                    return bad("geometry", "factors", "required for the homogeneous backend".into());
                };
                if f.is_empty() || f.iter().any(|k| *k < 2) {
                    return bad("geometry", "factors", "factor dimensions must be at least 2".into());
                }
                if let Some(s) = &g.scales {
                    if s.len() != f.len() || s.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        return bad("geometry", "scales", "one positive scale per factor".into());
                    }
                }
                if let Some(t) = g.soliton_tau {
                    if !(t > 0.0 && t.is_finite()) {
                        return bad("geometry", "soliton_tau", format!("must be positive, got {t}"));
                    }
                    if g.scales.is_some() {
                        return bad("geometry", "soliton_tau", "give either scales or soliton_tau".into());
                    }
                }
                if matches!(self.perturbation.shape, Shape::Bump | Shape::Tensor) {
                    return bad("perturbation", "shape", "bump and tensor apply to the warped backend".into());
                }
            }
        }
        if !self.perturbation.amplitude.is_finite() {
            return bad("perturbation", "amplitude", "must be finite".into());
        }
        let s = &self.solver;
        for (key, v) in [
            ("tol", s.tol),
            ("horizon", s.horizon),
            ("flow_tol", s.flow_tol),
            ("curvature_ceiling", s.curvature_ceiling),
            ("growth_window", s.growth_window),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad("solver", key, format!("must be positive, got {v}"));
            }
        }
        for (key, v) in [("max_steps", s.max_steps), ("trials", s.trials)] {
            if v == 0 {
                return bad("solver", key, "must be positive".into());
            }
        }
        for (key, text) in &self.expect {
            Expectation::parse(text).map_err(|m| ("expect", key.clone(), m))?;
        }
        Ok(())
    }

    /// Parsed expectations, in key order.
    pub fn expectations(&self) -> Vec<(String, Expectation)> {
        self.expect
            .iter()
            .map(|(k, v)| (k.clone(), Expectation::parse(v).expect("validated at parse time")))
            .collect()
    }

    /// SHA-256 of the canonical serialization of the effective config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configs serialize");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn locate_section(text: &str, section: &str) -> Option<usize> {
    text.lines().position(|l| l.trim() == format!("[{section}]")).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
[experiment]
name = "s"
job = "entropy"
backend = "warped"

[geometry]
dim = 2
cells = 64
"#;

    #[test]
    fn defaults_fill_optional_sections() {
        let c = ExperimentConfig::parse(SPHERE, "t").unwrap();
        assert_eq!(c.solver, SolverSpec::default());
        assert_eq!(c.perturbation.shape, Shape::None);
        assert_eq!(c.geometry.radius, 1.0);
    }

    #[test]
    fn validation_errors_carry_line_and_field() {
        let text = format!("{SPHERE}\n[solver]\nhorizon = -1.0\n");
        match ExperimentConfig::parse(&text, "t") {
            Err(CliError::Config { line, field, .. }) => {
                assert_eq!(field, "solver.horizon");
                assert_eq!(line, Some(12));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line() {
        let text = SPHERE.replace("cells = 64", "cells = = 64");
        match ExperimentConfig::parse(&text, "t") {
            Err(CliError::Config { line: Some(9), .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = SPHERE.replace("cells = 64", "cels = 64");
        assert!(matches!(ExperimentConfig::parse(&text, "t"), Err(CliError::Config { .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse(SPHERE, "t").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.perturbation.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
