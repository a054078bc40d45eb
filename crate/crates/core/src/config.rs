//! Flat `key = value` run configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::layers::BlockConfig;
use crate::sampling::FeatureVariant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Every tunable of the pipeline. Defaults are the desk-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub base_resolution: u32,
    pub stages: usize,
    pub channels: usize,
    pub pointnet_width: usize,
    pub width: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub mlp_ratio: usize,
    pub frequencies: usize,
    pub variant: FeatureVariant,
    pub tau: f64,
    pub samples: usize,
    pub neighbors: usize,
    pub random_pairs: usize,
    pub beta: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,

    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub steps: usize,
    pub seed: u64,

    pub flow_width: usize,
    pub flow_heads: usize,
    pub flow_blocks: usize,
    pub flow_batch: usize,
    pub flow_steps: usize,
    pub flow_lr_max: f64,
    pub flow_lr_min: f64,
    pub structure_patch: u32,
    pub structure_width: usize,
    pub sample_steps: usize,

    pub edge_threshold: f64,
    pub pair_batch: usize,
    pub max_pairs: usize,
    pub max_active: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            base_resolution: 16,
            stages: 3,
            channels: 8,
            pointnet_width: 32,
            width: 32,
            heads: 2,
            encoder_blocks: 2,
            mlp_ratio: 2,
            frequencies: 4,
            variant: FeatureVariant::Full,
            tau: 0.05,
            samples: 8_192,
            neighbors: 8,
            random_pairs: 8,
            beta: 1e-3,
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            lr_max: 2e-3,
            lr_min: 2e-4,
            weight_decay: 0.0,
            grad_clip: 1.0,
            steps: 2_000,
            seed: 0,
            flow_width: 32,
            flow_heads: 2,
            flow_blocks: 2,
            flow_batch: 4,
            flow_steps: 2_000,
            flow_lr_max: 2e-3,
            flow_lr_min: 1e-4,
            structure_patch: 4,
            structure_width: 64,
            sample_steps: 25,
            edge_threshold: 0.5,
            pair_batch: 65_536,
            max_pairs: 50_000_000,
            max_active: 200_000,
        }
    }
}

impl RunConfig {
    /// Reference settings for full-resolution runs. Not exercised at desk scale.
    pub fn full_scale() -> Self {
        Self {
            base_resolution: 128,
            channels: 16,
            pointnet_width: 1024,
            width: 512,
            heads: 8,
            samples: 819_200,
            lr_max: 1e-4,
            lr_min: 1e-5,
            ..Self::default()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            width: self.width,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            prenorm: true,
        }
    }

    pub fn finest_resolution(&self) -> u32 {
        self.base_resolution << self.stages
    }

    /// Grid cells per axis for the structure stage.
    pub fn structure_tokens_per_axis(&self) -> u32 {
        self.base_resolution / self.structure_patch
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("base_resolution", self.base_resolution as usize),
            ("channels", self.channels),
            ("pointnet_width", self.pointnet_width),
            ("width", self.width),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("frequencies", self.frequencies),
            ("samples", self.samples),
            ("flow_width", self.flow_width),
            ("flow_heads", self.flow_heads),
            ("flow_batch", self.flow_batch),
            ("structure_patch", self.structure_patch as usize),
            ("structure_width", self.structure_width),
            ("sample_steps", self.sample_steps),
            ("pair_batch", self.pair_batch),
            ("max_active", self.max_active),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("`{key}` must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(ConfigError::Invalid(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if !self.flow_width.is_multiple_of(self.flow_heads) || !self.structure_width.is_multiple_of(self.flow_heads) {
            return Err(ConfigError::Invalid(
                "flow widths must be divisible by flow_heads".into(),
            ));
        }
        if !self.base_resolution.is_multiple_of(self.structure_patch) {
            return Err(ConfigError::Invalid(format!(
                "structure_patch {} does not divide base_resolution {}",
                self.structure_patch, self.base_resolution
            )));
        }
        if (self.finest_resolution() as u64) > crate::sparse_grid::MAX_RESOLUTION as u64
            || self.stages > 20
        {
            return Err(ConfigError::Invalid(
                "finest resolution exceeds the grid key range".into(),
            ));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "edge_threshold {} outside (0, 1]",
                self.edge_threshold
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(ConfigError::Invalid(
                "`seed` must fit in a signed 64-bit integer".into(),
            ));
        }
        let nonneg = [
            ("tau", self.tau),
            ("beta", self.beta),
            ("gamma_pos", self.gamma_pos),
            ("gamma_neg", self.gamma_neg),
            ("lr_max", self.lr_max),
            ("lr_min", self.lr_min),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
            ("flow_lr_max", self.flow_lr_max),
            ("flow_lr_min", self.flow_lr_min),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "`{key}` must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::full_scale().validate().unwrap();
    }

    #[test]
    fn text_is_flat() {
        let text = RunConfig::default().to_text();
        assert!(
            text.lines().all(|l| l.is_empty() || l.contains(" = ")),
            "{text}"
        );
        assert!(text.contains("variant = \"full\""));
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_text("# desk run\nchannels = 4\nbeta = 0.5\n").unwrap();
        assert_eq!(cfg.channels, 4);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.width, RunConfig::default().width);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            RunConfig::from_text("channels = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_text("bogus = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_text("width = 30\nheads = 4"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_text("variant = \"nope\""),
            Err(ConfigError::Parse(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trips(beta in 0.0f64..10.0, lr in 1e-8f64..1.0, seed in 0..=i64::MAX as u64, channels in 1usize..64) {
            let cfg = RunConfig { beta, lr_max: lr, seed, channels, ..RunConfig::default() };
            prop_assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
