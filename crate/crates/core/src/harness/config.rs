use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bundle::{load_weights, ModelWeights};
use crate::error::{Error, Result};
use crate::extractor::CODEC_ALIGN;
use crate::matcher::default_sigma;

pub const PATCH_SIZES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum WeightsSource {
    Seed(u64),
    Path(PathBuf),
    /// Hand-built colour-carrying codec with zero fusion weights.
    Passthrough,
    /// Passthrough codec with fusion that substitutes aligned side content.
    PassthroughFused,
}

impl Default for WeightsSource {
    fn default() -> Self {
        WeightsSource::Seed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub patch_size: usize,
    pub channels: usize,
    /// Mask width in level-1 index units; `None` means `2B`.
    pub sigma: Option<f64>,
    /// Quantization step; `None` takes the step stored with the weights.
    pub q: Option<f32>,
    pub lambda: f64,
    pub alpha: f64,
    pub weights: WeightsSource,
    pub reuse: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            channels: 128,
            sigma: None,
            q: None,
            lambda: 0.01,
            alpha: 1.0,
            weights: WeightsSource::default(),
            reuse: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !PATCH_SIZES.contains(&self.patch_size) {
            return Err(Error::InvalidConfig(format!(
                "patch size must be one of {PATCH_SIZES:?}, got {}",
                self.patch_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channel count must be positive".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig(format!("sigma must be positive, got {s}")));
            }
        }
        if let Some(q) = self.q {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::InvalidConfig(format!("q must be positive, got {q}")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| default_sigma(self.patch_size))
    }

    /// Input dims must be multiples of this: 16 for the codec and `2B` so
    /// level 1 tiles into whole patches.
    pub fn alignment(&self) -> usize {
        CODEC_ALIGN.max(2 * self.patch_size)
    }

    /// Builds or loads the weights. A loaded bundle must have the
    /// configured channel count.
    pub fn resolve_weights(&self) -> Result<ModelWeights> {
        let q = self.q.unwrap_or(1.0);
        let w = match &self.weights {
            WeightsSource::Seed(seed) => ModelWeights::seeded(*seed, self.channels, q)?,
            WeightsSource::Passthrough => ModelWeights::passthrough(self.channels, q)?,
            WeightsSource::PassthroughFused => ModelWeights::passthrough_fused(self.channels, q)?,
            WeightsSource::Path(p) => {
                let mut w = load_weights(p)?;
                if w.channels() != self.channels {
                    return Err(Error::InvalidConfig(format!(
                        "bundle has {} channels, configuration asks for {}",
                        w.channels(),
                        self.channels
                    )));
                }
                if let Some(q) = self.q {
                    w.q = q;
                }
                w
            }
        };
        Ok(w)
    }
}
