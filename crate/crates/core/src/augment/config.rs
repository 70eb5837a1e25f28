use serde::{Deserialize, Serialize};

use super::SpecAugmentConfig;
use crate::error::{Error, Result};

/// Combined corruption settings for generating noisy hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Token substitution rate range `(p_min, p_max)`.
    pub substitution: (f64, f64),
    /// Top-k sampling of the emitted labels; 1 keeps the greedy output.
    #[serde(default = "one")]
    pub topk: usize,
    pub spec_augment: SpecAugmentConfig,
    pub mixup_lambda_max: f64,
}

fn one() -> usize {
    1
}

impl CorruptionConfig {
    pub const PRESETS: [&'static str; 4] = ["baseline", "low", "medium", "high"];

    pub fn preset(name: &str) -> Result<Self> {
        let (sub, spec, mixup) = match name {
            "baseline" => ((0.0, 0.0), SpecAugmentConfig::default(), 0.0),
            "low" => ((0.1, 0.1), SpecAugmentConfig { time: true, freq: false }, 0.2),
            "medium" => ((0.1, 0.1), SpecAugmentConfig { time: true, freq: true }, 0.4),
            "high" => ((0.2, 0.2), SpecAugmentConfig { time: true, freq: true }, 0.6),
            other => return Err(Error::InvalidConfig(format!("unknown corruption preset {other:?}"))),
        };
        Ok(Self { substitution: sub, topk: 1, spec_augment: spec, mixup_lambda_max: mixup })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.substitution;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("bad substitution range ({lo}, {hi})")));
        }
        if self.topk == 0 {
            return Err(Error::InvalidConfig("topk must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mixup_lambda_max) {
            return Err(Error::InvalidConfig(format!("bad mixup lambda_max {}", self.mixup_lambda_max)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
