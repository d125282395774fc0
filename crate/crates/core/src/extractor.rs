//! Shared single-image autoencoder and the side-image feature extractor.
//!
//! The encoder is four stride-2 stages (`3→C`, then `C→C` three times) and
//! produces the latent at `H/16`. The decoder starts with a same-size stage
//! on the latent and then upsamples three times; its four stage outputs, at
//! `H/16, H/8, H/4, H/2`, are pyramid levels `h = 4, 3, 2, 1`. A separate
//! head upsamples level 1 to the `H x W x 3` first-stage image. The
//! extractor mirrors the encoder layout without quantization and exposes
//! each stage output as a pyramid level.

use crate::conv::{ConvStage, Resample, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, FeaturePyramid};

pub const CODEC_KERNEL: usize = 5;
/// Images must be a multiple of this in both dims.
pub const CODEC_ALIGN: usize = 16;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecWeights {
    pub(crate) channels: usize,
    pub(crate) encoder: [ConvStage; 4],
    pub(crate) decoder: [ConvStage; 4],
    pub(crate) head: ConvStage,
    pub(crate) extractor: [ConvStage; 4],
    pub(crate) provenance: String,
}

impl CodecWeights {
    /// Assembles and validates a weight set. Stage order and channel
    /// chaining follow the module docs.
    pub fn new(
        encoder: [ConvStage; 4],
        decoder: [ConvStage; 4],
        head: ConvStage,
        extractor: [ConvStage; 4],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let channels = encoder[0].out_channels();
        let check = |name: &str, stage: &ConvStage, cin: usize, cout: usize, rs: Resample| {
            if stage.in_channels() != cin || stage.out_channels() != cout {
                return Err(Error::InvalidWeights(format!(
                    "{name}: expected {cin}->{cout} channels, got {}->{}",
                    stage.in_channels(),
                    stage.out_channels()
                )));
            }
            if stage.resample() != rs {
                return Err(Error::InvalidWeights(format!(
                    "{name}: expected {rs:?} stage, got {:?}",
                    stage.resample()
                )));
            }
            Ok(())
        };
        for (idx, stage) in encoder.iter().enumerate() {
            let cin = if idx == 0 { IMAGE_CHANNELS } else { channels };
            check(&format!("encoder.{}", idx + 1), stage, cin, channels, Resample::Down2)?;
        }
        for (idx, stage) in decoder.iter().enumerate() {
            let rs = if idx == 0 { Resample::Same } else { Resample::Up2 };
            check(&format!("decoder.{}", idx + 1), stage, channels, channels, rs)?;
        }
        check("decoder.head", &head, channels, IMAGE_CHANNELS, Resample::Up2)?;
        for (idx, stage) in extractor.iter().enumerate() {
            let cin = if idx == 0 { IMAGE_CHANNELS } else { channels };
            check(&format!("extractor.{}", idx + 1), stage, cin, channels, Resample::Down2)?;
        }
        Ok(Self {
            channels,
            encoder,
            decoder,
            head,
            extractor,
            provenance: provenance.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// All stages with their bundle names, in bundle order.
    pub fn named_stages(&self) -> Vec<(String, &ConvStage)> {
        let mut out = Vec::with_capacity(13);
        for (idx, s) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{}", idx + 1), s));
        }
        for (idx, s) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{}", idx + 1), s));
        }
        out.push(("decoder.head".to_string(), &self.head));
        for (idx, s) in self.extractor.iter().enumerate() {
            out.push((format!("extractor.{}", idx + 1), s));
        }
        out
    }

    /// Rebuilds from stages in [`CodecWeights::named_stages`] order.
    pub fn from_stage_list(stages: Vec<ConvStage>, provenance: impl Into<String>) -> Result<Self> {
        let stages: [ConvStage; 13] = stages.try_into().map_err(|v: Vec<ConvStage>| {
            Error::InvalidWeights(format!("codec needs 13 stages, got {}", v.len()))
        })?;
        let [e1, e2, e3, e4, d1, d2, d3, d4, head, x1, x2, x3, x4] = stages;
        Self::new([e1, e2, e3, e4], [d1, d2, d3, d4], head, [x1, x2, x3, x4], provenance)
    }
}

/// Deterministic stand-in for trained weights: every kernel drawn from one
/// [`SplitMix64`] stream seeded with `seed`, uniform in `[-1, 1) /
/// sqrt(fan_in)`, biases zero. Stage order is encoder, decoder, head,
/// extractor.
pub fn seeded_reference_weights(seed: u64, channels: usize) -> Result<CodecWeights> {
    if channels == 0 {
        return Err(Error::InvalidConfig("channel count must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let act = Some(LEAKY_SLOPE);
    let k = CODEC_KERNEL;
    let mut stage = |cin, rs, act| ConvStage::seeded(&mut rng, cin, channels, k, rs, act);
    let encoder = [
        stage(IMAGE_CHANNELS, Resample::Down2, act)?,
        stage(channels, Resample::Down2, act)?,
        stage(channels, Resample::Down2, act)?,
        stage(channels, Resample::Down2, None)?,
    ];
    let decoder = [
        stage(channels, Resample::Same, act)?,
        stage(channels, Resample::Up2, act)?,
        stage(channels, Resample::Up2, act)?,
        stage(channels, Resample::Up2, act)?,
    ];
    let head = ConvStage::seeded(&mut rng, channels, IMAGE_CHANNELS, k, Resample::Up2, None)?;
    let mut stage = |cin| ConvStage::seeded(&mut rng, cin, channels, k, Resample::Down2, act);
    let extractor = [
        stage(IMAGE_CHANNELS)?,
        stage(channels)?,
        stage(channels)?,
        stage(channels)?,
    ];
    CodecWeights::new(encoder, decoder, head, extractor, format!("seed:{seed}"))
}

/// Hand-built weights whose stages carry the image colour channels
/// unchanged through centre taps: features at level `h` are the image
/// subsampled by `2^h` (channels beyond 3 stay zero) and the first-stage
/// image is the latent upsampled back to full size. Requires `C >= 3`.
pub fn passthrough_weights(channels: usize) -> Result<CodecWeights> {
    if channels < IMAGE_CHANNELS {
        return Err(Error::InvalidConfig(format!(
            "passthrough weights need at least 3 channels, got {channels}"
        )));
    }
    let k = CODEC_KERNEL;
    let act = Some(LEAKY_SLOPE);
    let copy = |o: usize| (o < IMAGE_CHANNELS).then_some((o, 1.0));
    let sel = |cin, cout, rs, act| ConvStage::selector(cin, cout, k, rs, act, copy);
    let encoder = [
        sel(IMAGE_CHANNELS, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, None)?,
    ];
    let decoder = [
        sel(channels, channels, Resample::Same, act)?,
        sel(channels, channels, Resample::Up2, act)?,
        sel(channels, channels, Resample::Up2, act)?,
        sel(channels, channels, Resample::Up2, act)?,
    ];
    let head = sel(channels, IMAGE_CHANNELS, Resample::Up2, None)?;
    let extractor = [
        sel(IMAGE_CHANNELS, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, act)?,
        sel(channels, channels, Resample::Down2, act)?,
    ];
    CodecWeights::new(encoder, decoder, head, extractor, "preset:passthrough")
}

/// Quantized latent: every value is an integer multiple of `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    map: FeatureMap,
    q: f32,
}

impl Latent {
    /// Quantizes `map` with step `q`, rounding half away from zero.
    pub fn quantize(map: FeatureMap, q: f32) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quantization step must be positive and finite, got {q}"
            )));
        }
        let map = map.map(|v| quantize_value(v, q));
        Ok(Self { map, q })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn step(&self) -> f32 {
        self.q
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    /// Integer symbol indices `value / q`.
    pub fn symbols(&self) -> impl Iterator<Item = i64> + '_ {
        self.map
            .data()
            .iter()
            .map(move |&v| (v / self.q).round() as i64)
    }
}

#[inline]
fn quantize_value(v: f32, q: f32) -> f32 {
    // f32::round rounds half away from zero.
    (v / q).round() * q
}

fn check_image(image: &FeatureMap) -> Result<()> {
    if image.channels() != IMAGE_CHANNELS {
        return Err(Error::geometry(format!(
            "expected a 3-channel image, got {} channels",
            image.channels()
        )));
    }
    if !image.height().is_multiple_of(CODEC_ALIGN) || !image.width().is_multiple_of(CODEC_ALIGN) {
        return Err(Error::geometry(format!(
            "image dims {}x{} must be multiples of {CODEC_ALIGN}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

pub fn encode(image: &FeatureMap, weights: &CodecWeights, q: f32) -> Result<Latent> {
    check_image(image)?;
    let mut x = weights.encoder[0].forward(image)?;
    for stage in &weights.encoder[1..] {
        x = stage.forward(&x)?;
    }
    Latent::quantize(x, q)
}

/// Decoded pyramid (levels 1..=4) and the first-stage image.
pub fn decode_multiscale(
    latent: &Latent,
    weights: &CodecWeights,
) -> Result<(FeaturePyramid, FeatureMap)> {
    if latent.map().channels() != weights.channels() {
        return Err(Error::InvalidWeights(format!(
            "latent has {} channels, weights expect {}",
            latent.map().channels(),
            weights.channels()
        )));
    }
    let l4 = weights.decoder[0].forward(latent.map())?;
    let l3 = weights.decoder[1].forward(&l4)?;
    let l2 = weights.decoder[2].forward(&l3)?;
    let l1 = weights.decoder[3].forward(&l2)?;
    let image = weights.head.forward(&l1)?;
    Ok((FeaturePyramid::new([l1, l2, l3, l4])?, image))
}

/// Lossless side features: the extractor stages applied to the raw image,
/// with no quantization anywhere.
pub fn extract_lossless_features(image: &FeatureMap, weights: &CodecWeights) -> Result<FeaturePyramid> {
    check_image(image)?;
    let l1 = weights.extractor[0].forward(image)?;
    let l2 = weights.extractor[1].forward(&l1)?;
    let l3 = weights.extractor[2].forward(&l2)?;
    let l4 = weights.extractor[3].forward(&l3)?;
    FeaturePyramid::new([l1, l2, l3, l4])
}
