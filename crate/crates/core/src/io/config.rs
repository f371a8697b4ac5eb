//! TOML run configuration. Every section is optional and falls back to the
//! defaults of the module it configures; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::anchors::{AnchorSpec, FocalVariant, MatchThresholds, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::augment::AugPlan;
use crate::eval::{IouMode, DEFAULT_TP_IOU};
use crate::lidar_sim::{DirectivityRegion, ScanPattern, SimOptions, THRESHOLD_SPARSE};
use crate::pillars::PillarGridSpec;
use crate::spconv::BackboneSpec;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub variant: FocalVariant,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: FOCAL_ALPHA,
            gamma: FOCAL_GAMMA,
            variant: FocalVariant::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectivityConfig {
    pub region: DirectivityRegion,
    pub window_us: f64,
    pub threshold: usize,
}

impl Default for DirectivityConfig {
    fn default() -> Self {
        Self {
            region: DirectivityRegion::default(),
            window_us: 100_000.0,
            threshold: THRESHOLD_SPARSE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mode: IouMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_TP_IOU,
            mode: IouMode::ThreeD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramesConfig {
    pub window_us: f64,
    /// Size of the simulated stand-in for recorded flights when no labeled
    /// frames are supplied to augmentation.
    pub source_frames: usize,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self {
            window_us: 100_000.0,
            source_frames: 1603,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Embedding width `F`.
    pub channels: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: PillarGridSpec,
    pub encoder: EncoderConfig,
    pub backbone: BackboneSpec,
    pub anchors: AnchorSpec,
    pub matching: MatchThresholds,
    pub focal: FocalConfig,
    pub scan: ScanPattern,
    pub sim: SimOptions,
    pub frames: FramesConfig,
    pub directivity: DirectivityConfig,
    pub augment: AugPlan,
    pub eval: EvalConfig,
    pub tracker: TrackerConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, IoError> {
        let cfg: Config = toml::from_str(s).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, IoError> {
        toml::to_string_pretty(self).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let cfg = |e: &dyn std::fmt::Display| IoError::Config(e.to_string());
        self.grid.validate().map_err(|e| cfg(&e))?;
        self.backbone.validate().map_err(|e| cfg(&e))?;
        self.anchors.validate().map_err(|e| cfg(&e))?;
        self.matching.validate().map_err(|e| cfg(&e))?;
        self.scan.validate().map_err(|e| cfg(&e))?;
        self.directivity.region.validate().map_err(|e| cfg(&e))?;
        self.augment.validate().map_err(|e| cfg(&e))?;
        if self.encoder.channels == 0 {
            return Err(IoError::Config("encoder.channels must be positive".into()));
        }
        if !(self.frames.window_us.is_finite() && self.frames.window_us > 0.0) {
            return Err(IoError::BadWindow(self.frames.window_us));
        }
        if !(self.directivity.window_us.is_finite() && self.directivity.window_us > 0.0) {
            return Err(IoError::BadWindow(self.directivity.window_us));
        }
        if !(0.0..=1.0).contains(&self.eval.iou_threshold) {
            return Err(IoError::Config("eval.iou_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
