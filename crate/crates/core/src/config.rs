//! JSON pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fog::FogParams;
use crate::formats;
use crate::fusion::ScaleSet;
use crate::synth::SceneSpec;
use crate::train::TrainConfig;

/// Every pipeline knob. Unknown keys are rejected and missing keys take the
/// defaults shown by [`PipelineConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub scales: ScaleSet,
    pub fog: FogParams,
    pub scene: SceneSpec,
    /// Use source spatial priors when ranking pseudo-labels.
    pub spatial_priors: bool,
    pub prior_sigma: f64,
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    /// Externally translated source images (same file names as the source
    /// `img/` entries); labels still come from `source_dir`.
    pub translated_source_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            scales: ScaleSet::default(),
            fog: FogParams::default(),
            scene: SceneSpec::default(),
            spatial_priors: false,
            prior_sigma: 8.0,
            source_dir: None,
            target_dir: None,
            translated_source_dir: None,
            checkpoint: None,
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.scales.validate()?;
        self.fog.validate()?;
        self.scene.validate()?;
        if !(self.prior_sigma.is_finite() && self.prior_sigma >= 0.0) {
            return Err(Error::invalid(format!("prior_sigma must be >= 0, got {}", self.prior_sigma)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = formats::read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(format!("{}: not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
