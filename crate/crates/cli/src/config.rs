//! Run configuration for `pals reconstruct`, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pals::field::{BasisKind, FieldModel, GridSpec, DEFAULT_EXTENT};
use pals::harness::{Modality, NoiseSpec, Phantom, SimulationSpec};
use pals::solver::{GNConfig, GammaMode, RBFSchedule};
use pals::{PalsError, Result};

/// Either a built-in phantom name or an explicit primitive list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomSpec {
    Builtin(String),
    Custom(Phantom),
}

impl PhantomSpec {
    pub fn build(&self, grid: &GridSpec) -> Result<Phantom> {
        match self {
            PhantomSpec::Builtin(name) => Phantom::builtin(name, grid.mid()),
            PhantomSpec::Custom(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

/// One data modality: read from `files`, or simulated from the phantom when
/// `files` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityConfig {
    pub modality: Modality,
    #[serde(default)]
    pub n_experiments: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_offset: Option<f64>,
    /// Dip CSV, silhouette manifest, or point-cloud files. Relative paths are
    /// resolved against the directory of the config file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<PathBuf>,
}

impl ModalityConfig {
    pub fn simulation_spec(&self, cfg: &RunConfig) -> SimulationSpec {
        let mut spec = SimulationSpec {
            noise: self.noise,
            grid_hi: cfg.grid_hi,
            grid_lo: cfg.grid_lo,
            eps_offset: self.eps_offset,
            ..SimulationSpec::new(self.modality, self.n_experiments)
        };
        if let Some(eta) = self.eta {
            spec.eta = eta;
        }
        if let Some(n) = self.n_points {
            spec.n_points = n;
        }
        spec
    }
}

fn default_grid_hi() -> GridSpec {
    GridSpec::cube(64, DEFAULT_EXTENT).expect("valid grid")
}

fn default_kind() -> BasisKind {
    BasisKind::Ellipsoidal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Simulation grid.
    #[serde(default = "default_grid_hi")]
    pub grid_hi: GridSpec,
    /// Reconstruction grid.
    #[serde(default)]
    pub grid_lo: GridSpec,
    #[serde(default = "default_kind")]
    pub kind: BasisKind,
    #[serde(default)]
    pub model: FieldModel,
    #[serde(default)]
    pub gn: GNConfig,
    #[serde(default)]
    pub schedule: RBFSchedule,
    #[serde(default)]
    pub gamma: GammaMode,
    #[serde(default)]
    pub estimate_calibration: bool,
    /// Needed to simulate data and to score the result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    pub modalities: Vec<ModalityConfig>,
    /// Also write `misfit.svg`.
    #[serde(default)]
    pub svg: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PalsError::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PalsError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut cfg.modalities {
            for f in &mut m.files {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        self.grid_hi.validate()?;
        self.grid_lo.validate()?;
        self.model.heaviside.validate()?;
        self.gn.validate()?;
        self.schedule.validate()?;
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(PalsError::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if self.modalities.is_empty() {
            return Err(PalsError::Config("at least one modality is required".into()));
        }
        if let Some(p) = &self.phantom {
            p.build(&self.grid_lo)?;
        }
        for m in &self.modalities {
            if m.files.is_empty() {
                if self.phantom.is_none() {
                    return Err(PalsError::Config(format!(
                        "modality {} has no files and there is no phantom to simulate from",
                        m.modality
                    )));
                }
                m.simulation_spec(self).validate()?;
            } else if m.modality != Modality::Pc && m.files.len() != 1 {
                return Err(PalsError::Config(format!(
                    "modality {} takes exactly one file, got {}",
                    m.modality,
                    m.files.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"phantom": "ellipsoid", "modalities": [{"modality": "dip", "n_experiments": 4}]}"#)
            .unwrap();
        assert_eq!(cfg.schedule, RBFSchedule::default());
        assert_eq!(cfg.kind, BasisKind::Ellipsoidal);
        assert_eq!(cfg.grid_lo.dims, [32; 3]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"modalities": [], "lamda": 1}"#).unwrap_err();
        assert!(matches!(err, PalsError::Config(_)));
        let nested = r#"{"modalities": [{"modality": "dip", "n_experiments": 1, "nosie": {}}]}"#;
        assert!(RunConfig::from_json(nested).is_err());
        assert!(RunConfig::from_json(r#"{"modalities": [], "gn": {"it_gm": 3}}"#).is_err());
    }

    #[test]
    fn simulation_without_phantom_is_invalid() {
        let cfg = RunConfig::from_json(r#"{"modalities": [{"modality": "sfs", "n_experiments": 2}]}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn custom_phantoms_parse() {
        let cfg = RunConfig::from_json(
            r#"{"phantom": {"name": "cube", "primitives": [{"shape": "box", "min": [2,2,2], "max": [3,3,3]}]},
                "modalities": [{"modality": "pc", "n_experiments": 1}]}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert!(matches!(cfg.phantom, Some(PhantomSpec::Custom(_))));
    }
}
