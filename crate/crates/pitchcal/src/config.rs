//! Run configuration: a single JSON document in SI units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::ESConfig;
use crate::field::{BlurSpec, PlayfieldModel};
use crate::fitness::LossWeights;
use crate::geometry::{CameraModel, Intrinsics, Pose};
use crate::simulate::{DriftSpec, RigSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One real camera: intrinsics, image size, outdated pose and its mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// Pose to start the search from.
    pub start: Pose,
    /// Line mask, 8-bit PGM or PNG; relative paths resolve against the
    /// config file's directory.
    pub mask: PathBuf,
    /// Known ground-truth pose; metrics are reported when every camera has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Pose>,
}

/// Zeroes random square patches of every synthetic mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSpec {
    pub patches: usize,
    /// Patch side in camera pixels.
    pub size: usize,
}

/// Synthetic scene: ground-truth rig, drift applied to get the start poses,
/// and masks rendered from the truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub rig: RigSpec,
    /// Explicit ground-truth cameras; replaces `rig` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cameras: Option<Vec<CameraModel>>,
    pub drift: DriftSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<DropoutSpec>,
}

/// Bird's-eye resolutions in meters per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolutions {
    /// Frame used inside the loss.
    pub optimize: f64,
    /// Frame used for metrics and output images.
    pub evaluate: f64,
}

impl Default for Resolutions {
    fn default() -> Self {
        Self {
            optimize: 0.1,
            evaluate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: PlayfieldModel,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cameras: Vec<CameraConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    pub es: ESConfig,
    pub loss: LossWeights,
    pub blur: BlurSpec,
    pub resolution: Resolutions,
    pub output: PathBuf,
    /// Master seed; drives drift, dropout and the evolution strategy
    /// (it replaces `es.seed`).
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            field: PlayfieldModel::default(),
            cameras: Vec::new(),
            synthetic: None,
            es: ESConfig::default(),
            loss: LossWeights::default(),
            blur: BlurSpec::default(),
            resolution: Resolutions::default(),
            output: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// The default two-camera synthetic experiment.
    pub fn synthetic_default() -> Self {
        Self {
            synthetic: Some(SyntheticConfig::default()),
            ..Self::default()
        }
    }

    /// Reads and validates a config.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_json(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config read from `path` without validating it; relative
    /// mask and output paths are resolved against the file's directory.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for cam in &mut cfg.cameras {
            if cam.mask.is_relative() {
                cam.mask = base.join(&cam.mask);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    /// Checks the field, blur and resolution blocks only.
    pub fn validate_rendering(&self) -> Result<(), ConfigError> {
        self.field.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.blur.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, r) in [
            ("optimize", self.resolution.optimize),
            ("evaluate", self.resolution.evaluate),
        ] {
            if !(r.is_finite() && r > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} resolution must be > 0")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.validate_rendering()?;
        self.es.validate().map_err(|e| invalid(&e))?;
        self.loss.validate().map_err(|e| invalid(&e))?;
        match &self.synthetic {
            Some(s) => {
                s.drift.validate().map_err(|e| invalid(&e))?;
                if let Some(cams) = &s.cameras {
                    if cams.is_empty() {
                        return Err(ConfigError::Invalid("synthetic camera list is empty".into()));
                    }
                }
            }
            None => {
                if self.cameras.is_empty() {
                    return Err(ConfigError::Invalid(
                        "need at least one camera or a synthetic block".into(),
                    ));
                }
                for (i, c) in self.cameras.iter().enumerate() {
                    CameraModel::new(c.intrinsics, c.start, c.width, c.height)
                        .validate()
                        .map_err(|e| ConfigError::Invalid(format!("camera {i}: {e}")))?;
                    if !c.mask.exists() {
                        return Err(ConfigError::Invalid(format!(
                            "camera {i}: mask {} not found",
                            c.mask.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_needs_cameras() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn synthetic_block_alone_is_valid() {
        let cfg: RunConfig = serde_json::from_str(r#"{"synthetic": {}}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg, RunConfig::synthetic_default());
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"synthetic": {}, "loss": {"lambda_tradeoff": 1.5}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"synthetic": {}, "sed": 3}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::synthetic_default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
