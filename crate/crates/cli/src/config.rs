//! Experiment configuration files (JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Smsr,
    Smr,
    Holder,
    Coercivity,
    Mfcq,
    Growth,
    AbCheck,
    EulerStudy,
    Solve,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Smsr => "smsr",
            Self::Smr => "smr",
            Self::Holder => "holder",
            Self::Coercivity => "coercivity",
            Self::Mfcq => "mfcq",
            Self::Growth => "growth",
            Self::AbCheck => "ab_check",
            Self::EulerStudy => "euler_study",
            Self::Solve => "solve",
        }
    }

    /// Experiments that draw perturbation samples over `magnitudes`.
    pub fn is_sweep(self) -> bool {
        matches!(self, Self::Smsr | Self::Smr | Self::Holder)
    }
}

/// Either `N` (time cells), `Nx`/`Nt` (space-time mesh) or `N_list` with
/// `N_reference` (convergence study).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "Nx", default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(rename = "Nt", default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(rename = "N_reference", default, skip_serializing_if = "Option::is_none")]
    pub n_reference: Option<usize>,
}

/// Recognized keys of the `tolerances` map.
pub const TOLERANCE_KEYS: &[&str] = &["solver", "min_dist"];

/// Recognized keys of the `parameters` map.
pub const PARAMETER_KEYS: &[&str] = &[
    "directions",
    "tau",
    "threshold",
    "c0",
    "alpha",
    "gamma",
    "kappa_exp",
    "samples",
    "delta",
    "trust_radius",
    "max_sweeps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem_id: String,
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default)]
    pub magnitudes: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Disturbance blocks of a sweep: `"all"` (default) or `"rho"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<String>,
    /// Growth variant of the affine check: `AA2`, `AA2'`, `AA2p` (default)
    /// or `PB`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if reglab::problems::lookup(&self.problem_id).is_none() {
            return Err(CliError::UnknownProblem(self.problem_id.clone()));
        }
        if self.magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(CliError::Config("magnitudes must be positive and finite".into()));
        }
        if self.magnitudes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("magnitudes must be strictly ascending".into()));
        }
        if self.experiment.is_sweep() && self.magnitudes.is_empty() {
            return Err(CliError::Config(format!(
                "experiment {} needs a nonempty magnitudes list",
                self.experiment.name()
            )));
        }
        for (map, known, what) in [
            (&self.tolerances, TOLERANCE_KEYS, "tolerance"),
            (&self.parameters, PARAMETER_KEYS, "parameter"),
        ] {
            for (k, v) in map {
                if !known.contains(&k.as_str()) {
                    return Err(CliError::Config(format!(
                        "unknown {what} {k:?} (known: {})",
                        known.join(", ")
                    )));
                }
                if !v.is_finite() {
                    return Err(CliError::Config(format!("{what} {k:?} is not finite")));
                }
            }
        }
        if let Some(b) = &self.blocks {
            if b != "all" && b != "rho" {
                return Err(CliError::Config(format!("blocks must be \"all\" or \"rho\", got {b:?}")));
            }
        }
        if let Some(v) = &self.variant {
            if !["AA2", "AA2'", "AA2p", "PB"].contains(&v.as_str()) {
                return Err(CliError::Config(format!("unknown growth variant {v:?}")));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    pub fn parameter(&self, key: &str, default: f64) -> f64 {
        self.parameters.get(key).copied().unwrap_or(default)
    }

    /// A count-valued parameter (must be a nonnegative integer).
    pub fn count(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.parameters.get(key) {
            None => Ok(default),
            Some(&v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            Some(v) => Err(CliError::Config(format!("parameter {key:?} must be a count, got {v}"))),
        }
    }

    pub fn rho_only(&self) -> bool {
        self.blocks.as_deref() == Some("rho")
    }

    pub fn cells(&self, default: usize) -> Result<usize, CliError> {
        match self.grid.n {
            Some(0) => Err(CliError::Config("grid N must be positive".into())),
            Some(n) => Ok(n),
            None => Ok(default),
        }
    }
}
