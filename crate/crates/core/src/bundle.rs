//! On-disk bundles: a directory holding a `manifest.json` and one FMAP1
//! file per array.
//!
//! A weights bundle stores each convolution stage as two files, the kernel
//! with dims `(out, in, k*k)` and the bias with dims `(1, 1, out)`. The
//! manifest lists the stages in evaluation order with their shapes,
//! resampling mode and leaky slope (`null` for a linear stage), plus the
//! quantization step the codec was built for.
//!
//! A pyramid bundle stores levels 1..=4 as `level1.fmap` .. `level4.fmap`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conv::{ConvStage, Resample};
use crate::error::{Error, Result};
use crate::extractor::{passthrough_weights, seeded_reference_weights, CodecWeights};
use crate::fusion::FusionWeights;
use crate::tensor::{FeatureMap, FeaturePyramid, PYRAMID_LEVELS};

pub const MANIFEST: &str = "manifest.json";
const WEIGHTS_FORMAT: &str = "msfdpm-weights";
const PYRAMID_FORMAT: &str = "msfdpm-pyramid";
const BUNDLE_VERSION: u32 = 1;

/// Codec and fusion weights plus the quantization step they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub codec: CodecWeights,
    pub fusion: FusionWeights,
    pub q: f32,
}

impl ModelWeights {
    pub fn new(codec: CodecWeights, fusion: FusionWeights, q: f32) -> Result<Self> {
        if codec.channels() != fusion.channels() {
            return Err(Error::InvalidWeights(format!(
                "codec has {} channels, fusion {}",
                codec.channels(),
                fusion.channels()
            )));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidConfig(format!("quantization step must be positive, got {q}")));
        }
        Ok(Self { codec, fusion, q })
    }

    pub fn seeded(seed: u64, channels: usize, q: f32) -> Result<Self> {
        Self::new(
            seeded_reference_weights(seed, channels)?,
            FusionWeights::seeded(seed, channels)?,
            q,
        )
    }

    /// Passthrough codec with zero fusion weights: the second-stage image
    /// equals the first.
    pub fn passthrough(channels: usize, q: f32) -> Result<Self> {
        Self::new(passthrough_weights(channels)?, FusionWeights::zeros(channels)?, q)
    }

    /// Passthrough codec and fusion that substitutes the aligned side
    /// image for the decoded one at level 1.
    pub fn passthrough_fused(channels: usize, q: f32) -> Result<Self> {
        Self::new(passthrough_weights(channels)?, FusionWeights::passthrough(channels)?, q)
    }

    pub fn channels(&self) -> usize {
        self.codec.channels()
    }

    pub fn provenance(&self) -> String {
        if self.codec.provenance() == self.fusion.provenance() {
            self.codec.provenance().to_string()
        } else {
            format!("{}+{}", self.codec.provenance(), self.fusion.provenance())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    format: String,
    version: u32,
    channels: usize,
    q: f32,
    provenance: String,
    stages: Vec<StageEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageEntry {
    name: String,
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    resample: Resample,
    activation: Option<f32>,
    kernel: String,
    bias: String,
}

fn format_error(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "bundle",
        reason: reason.into(),
    }
}

pub fn save_weights(dir: impl AsRef<Path>, weights: &ModelWeights) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut stages = Vec::new();
    let named = weights
        .codec
        .named_stages()
        .into_iter()
        .chain(weights.fusion.named_stages());
    for (name, stage) in named {
        let k = stage.kernel_size();
        let kernel = FeatureMap::from_vec(
            stage.out_channels(),
            stage.in_channels(),
            k * k,
            stage.kernel().to_vec(),
        )?;
        let bias = FeatureMap::from_vec(1, 1, stage.out_channels(), stage.bias().to_vec())?;
        let entry = StageEntry {
            kernel: format!("{name}.kernel.fmap"),
            bias: format!("{name}.bias.fmap"),
            name,
            in_channels: stage.in_channels(),
            out_channels: stage.out_channels(),
            kernel_size: k,
            resample: stage.resample(),
            activation: stage.activation(),
        };
        kernel.save(dir.join(&entry.kernel))?;
        bias.save(dir.join(&entry.bias))?;
        stages.push(entry);
    }
    let manifest = WeightsManifest {
        format: WEIGHTS_FORMAT.into(),
        version: BUNDLE_VERSION,
        channels: weights.channels(),
        q: weights.q,
        provenance: weights.provenance(),
        stages,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_weights(dir: impl AsRef<Path>) -> Result<ModelWeights> {
    let dir = dir.as_ref();
    let manifest: WeightsManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.format != WEIGHTS_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(format_error(format!(
            "expected {WEIGHTS_FORMAT} v{BUNDLE_VERSION}, found {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut codec = Vec::new();
    let mut fusion = Vec::new();
    for entry in &manifest.stages {
        let k = entry.kernel_size;
        let kernel = FeatureMap::load(dir.join(&entry.kernel))?;
        if kernel.dims() != (entry.out_channels, entry.in_channels, k * k) {
            return Err(format_error(format!(
                "{}: kernel dims {:?} disagree with the manifest",
                entry.name,
                kernel.dims()
            )));
        }
        let bias = FeatureMap::load(dir.join(&entry.bias))?;
        if bias.dims() != (1, 1, entry.out_channels) {
            return Err(format_error(format!(
                "{}: bias dims {:?} disagree with the manifest",
                entry.name,
                bias.dims()
            )));
        }
        let stage = ConvStage::new(
            entry.in_channels,
            entry.out_channels,
            k,
            entry.resample,
            entry.activation,
            kernel.into_vec(),
            bias.into_vec(),
        )?;
        if entry.name.starts_with("fusion.") {
            fusion.push(stage);
        } else {
            codec.push(stage);
        }
    }
    let (codec_prov, fusion_prov) = match manifest.provenance.split_once('+') {
        Some((c, f)) => (c.to_string(), f.to_string()),
        None => (manifest.provenance.clone(), manifest.provenance.clone()),
    };
    let weights = ModelWeights::new(
        CodecWeights::from_stage_list(codec, codec_prov)?,
        FusionWeights::from_stage_list(fusion, fusion_prov)?,
        manifest.q,
    )?;
    if weights.channels() != manifest.channels {
        return Err(format_error(format!(
            "manifest says {} channels, stages have {}",
            manifest.channels,
            weights.channels()
        )));
    }
    Ok(weights)
}

#[derive(Debug, Serialize, Deserialize)]
struct PyramidManifest {
    format: String,
    version: u32,
    levels: Vec<String>,
}

pub fn save_pyramid(dir: impl AsRef<Path>, pyramid: &FeaturePyramid) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    for h in 1..=PYRAMID_LEVELS {
        let name = format!("level{h}.fmap");
        pyramid.level(h).save(dir.join(&name))?;
        levels.push(name);
    }
    let manifest = PyramidManifest {
        format: PYRAMID_FORMAT.into(),
        version: BUNDLE_VERSION,
        levels,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_pyramid(dir: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let dir = dir.as_ref();
    let manifest: PyramidManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.format != PYRAMID_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(format_error(format!(
            "expected {PYRAMID_FORMAT} v{BUNDLE_VERSION}, found {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.levels.len() != PYRAMID_LEVELS {
        return Err(format_error(format!(
            "pyramid bundle lists {} levels",
            manifest.levels.len()
        )));
    }
    let levels: Vec<FeatureMap> = manifest
        .levels
        .iter()
        .map(|name| FeatureMap::load(dir.join(name)))
        .collect::<Result<_>>()?;
    FeaturePyramid::new(levels.try_into().expect("four levels"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::seeded(11, 4, 0.5).unwrap();
        save_weights(dir.path(), &w).unwrap();
        let back = load_weights(dir.path()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.provenance(), "seed:11");
    }

    #[test]
    fn mixed_provenance_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::passthrough(3, 1.0).unwrap();
        save_weights(dir.path(), &w).unwrap();
        assert_eq!(load_weights(dir.path()).unwrap(), w);
    }

    #[test]
    fn corrupted_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_weights(dir.path(), &ModelWeights::seeded(1, 3, 1.0).unwrap()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replacen("\"kernel_size\": 5", "\"kernel_size\": 3", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_weights(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn pyramid_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let level = |d: usize| FeatureMap::from_fn(32 / d, 64 / d, 2, |r, c, ch| (r * 7 + c + ch) as f32).unwrap();
        let p = FeaturePyramid::new([level(1), level(2), level(4), level(8)]).unwrap();
        save_pyramid(dir.path(), &p).unwrap();
        assert_eq!(load_pyramid(dir.path()).unwrap(), p);
    }
}
