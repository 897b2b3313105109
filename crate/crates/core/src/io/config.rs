//! JSON configuration files: neck hyperparameters plus experiment settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::{NeckConfig, Upsample, Variant};
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Side length of the finest synthetic level.
    pub base_hw: usize,
    pub batch: usize,
    /// `(dy, dx)` applied to every deep level, in that level's pixels.
    pub shift_px: [f64; 2],
    pub warp_amp: f64,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            base_hw: 64,
            batch: 2,
            shift_px: [0.0, 2.0],
            warp_amp: 0.0,
            steps: 200,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    levels: Option<usize>,
    in_channels: Vec<usize>,
    out_channels: Option<usize>,
    galm_groups: Option<usize>,
    attn_kernel: Option<usize>,
    attn_reduction: Option<usize>,
    variant: Option<Variant>,
    upsample: Option<Upsample>,
    output_convs: Option<bool>,
    dtype: Option<DType>,
    seed: Option<u64>,
    #[serde(default)]
    experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub neck: NeckConfig,
    pub experiment: ExperimentConfig,
}

impl RawConfig {
    fn resolve(self) -> RunConfig {
        let mut neck = NeckConfig::new(self.in_channels);
        if let Some(v) = self.levels {
            neck.levels = v;
        }
        if let Some(v) = self.out_channels {
            neck.out_channels = v;
        }
        if let Some(v) = self.galm_groups {
            neck.galm_groups = v;
        }
        if let Some(v) = self.attn_kernel {
            neck.attn_kernel = v;
        }
        if let Some(v) = self.attn_reduction {
            neck.attn_reduction = v;
        }
        if let Some(v) = self.variant {
            neck.variant = v;
        }
        if let Some(v) = self.upsample {
            neck.upsample = v;
        }
        if let Some(v) = self.output_convs {
            neck.output_convs = v;
        }
        if let Some(v) = self.dtype {
            neck.dtype = v;
        }
        if let Some(v) = self.seed {
            neck.seed = v;
        }
        RunConfig {
            neck,
            experiment: self.experiment,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("experiment.{k}");
        if self.batch == 0 {
            return Err(Error::config(key("batch"), "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config(key("steps"), "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(key("lr"), format!("must be a positive finite number, got {}", self.lr)));
        }
        if !self.shift_px.iter().all(|s| s.is_finite()) {
            return Err(Error::config(key("shift_px"), "must be finite"));
        }
        if !(self.warp_amp.is_finite() && self.warp_amp >= 0.0) {
            return Err(Error::config(key("warp_amp"), "must be a non-negative finite number"));
        }
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        Error::config(key, e.into_inner().to_string())
    })?;
    let cfg = raw.resolve();
    cfg.neck.validate()?;
    cfg.experiment.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
