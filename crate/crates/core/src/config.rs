//! Declarative configuration shared by every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::cluster::KMeansConfig;
use crate::detector::DetectorConfig;
use crate::embedder::EmbedderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{LapsError, Result};
use crate::icss::DEFAULT_PAIR_BUDGET;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcssConfig {
    pub budget: usize,
}

impl Default for IcssConfig {
    fn default() -> Self {
        IcssConfig {
            budget: DEFAULT_PAIR_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tolerances_s: Vec<f64>,
    pub include_endpoints: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerances_s: vec![2.0, 5.0],
            include_endpoints: false,
        }
    }
}

/// Every stage's settings. The top-level `seed` overrides the per-stage
/// seeds; see [`PipelineConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Derive `detector.theta_on` from the corpus instead of using the
    /// configured value.
    pub auto_calibrate: bool,
    pub encoder: EncoderConfig,
    pub detector: DetectorConfig,
    pub calibration: CalibrationConfig,
    pub embedder: EmbedderConfig,
    pub cluster: KMeansConfig,
    pub icss: IcssConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            auto_calibrate: true,
            encoder: EncoderConfig::default(),
            detector: DetectorConfig::default(),
            calibration: CalibrationConfig::default(),
            embedder: EmbedderConfig::default(),
            cluster: KMeansConfig::default(),
            icss: IcssConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LapsError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LapsError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| LapsError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LapsError::Internal(e.to_string()))
    }

    /// Copy with the global seed pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.encoder.seed = c.seed;
        c.embedder.seed = c.seed;
        c.cluster.seed = c.seed;
        c
    }

    /// Checks each stage and their agreement with one another.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.detector.validate()?;
        self.embedder.validate()?;
        if self.encoder.fsq.latent_dim != self.embedder.input_dim {
            return Err(LapsError::Config(format!(
                "encoder latent_dim {} does not match embedder input_dim {}",
                self.encoder.fsq.latent_dim, self.embedder.input_dim
            )));
        }
        if self.calibration.otsu_bins < 2 || self.calibration.n_candidates < 1 {
            return Err(LapsError::Config(
                "calibration needs >= 2 Otsu bins and >= 1 candidate".into(),
            ));
        }
        if self.cluster.k < 1 || self.cluster.n_init < 1 || self.cluster.max_iter < 1 {
            return Err(LapsError::Config(
                "cluster k, n_init and max_iter must be >= 1".into(),
            ));
        }
        if self.icss.budget < 1 {
            return Err(LapsError::Config("icss budget must be >= 1".into()));
        }
        if self.eval.tolerances_s.is_empty()
            || self
                .eval
                .tolerances_s
                .iter()
                .any(|t| !(*t > 0.0 && t.is_finite()))
        {
            return Err(LapsError::Config("eval tolerances must be positive".into()));
        }
        Ok(())
    }
}
