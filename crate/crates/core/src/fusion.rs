//! Coarse-to-fine fusion of aligned side features with decoded main
//! features, and the second-stage reconstruction.
//!
//! ```text
//! phi4 = Res2(Res1(cat(main4, aligned4)))
//! phih = Res2(Res1(cat(mainh, alignedh, up(phi_{h+1}))) + up(phi_{h+1}))   h = 3, 2, 1
//! x2   = head(phi1) + x1
//! ```
//!
//! `up` is nearest-neighbour ×2. `head` upsamples `phi1` from `H/2` to `H`
//! and projects `C` channels to 3.

use crate::conv::{ConvStage, Resample, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::extractor::IMAGE_CHANNELS;
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, FeaturePyramid, PYRAMID_LEVELS};

pub const FUSION_KERNEL: usize = 3;

/// Mixed into the seed so fusion weights do not share a stream with the
/// codec weights of the same seed.
const FUSION_SEED_SALT: u64 = 0xF05E_D5EE_D000_0001;

/// Two 3x3 leaky convolutions plus a skip connection: identity when the
/// channel counts match, a 1x1 projection otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub(crate) conv_a: ConvStage,
    pub(crate) conv_b: ConvStage,
    pub(crate) skip: Option<ConvStage>,
}

impl ResidualBlock {
    pub fn new(conv_a: ConvStage, conv_b: ConvStage, skip: Option<ConvStage>) -> Result<Self> {
        let (cin, c) = (conv_a.in_channels(), conv_a.out_channels());
        let same = |s: &ConvStage| s.resample() == Resample::Same;
        if conv_b.in_channels() != c || conv_b.out_channels() != c {
            return Err(Error::InvalidWeights(format!(
                "residual block second conv must be {c}->{c}"
            )));
        }
        if !same(&conv_a) || !same(&conv_b) {
            return Err(Error::InvalidWeights("residual convs must keep spatial size".into()));
        }
        match &skip {
            None if cin != c => {
                return Err(Error::InvalidWeights(format!(
                    "residual block {cin}->{c} needs a projection skip"
                )))
            }
            Some(p)
                if p.in_channels() != cin
                    || p.out_channels() != c
                    || p.kernel_size() != 1
                    || !same(p) =>
            {
                return Err(Error::InvalidWeights(format!(
                    "projection skip must be a 1x1 {cin}->{c} stage"
                )))
            }
            _ => {}
        }
        Ok(Self { conv_a, conv_b, skip })
    }

    fn zeros(cin: usize, c: usize) -> Result<Self> {
        let conv = |i| ConvStage::zeros(i, c, FUSION_KERNEL, Resample::Same, Some(LEAKY_SLOPE));
        let skip = (cin != c)
            .then(|| ConvStage::zeros(cin, c, 1, Resample::Same, None))
            .transpose()?;
        Self::new(conv(cin)?, conv(c)?, skip)
    }

    fn seeded(rng: &mut SplitMix64, cin: usize, c: usize) -> Result<Self> {
        let mut conv =
            |i| ConvStage::seeded(rng, i, c, FUSION_KERNEL, Resample::Same, Some(LEAKY_SLOPE));
        let a = conv(cin)?;
        let b = conv(c)?;
        let skip = (cin != c)
            .then(|| ConvStage::seeded(rng, cin, c, 1, Resample::Same, None))
            .transpose()?;
        Self::new(a, b, skip)
    }

    pub fn in_channels(&self) -> usize {
        self.conv_a.in_channels()
    }

    pub fn conv_a(&self) -> &ConvStage {
        &self.conv_a
    }

    pub fn conv_b(&self) -> &ConvStage {
        &self.conv_b
    }

    pub fn skip(&self) -> Option<&ConvStage> {
        self.skip.as_ref()
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let body = self.conv_b.forward(&self.conv_a.forward(x)?)?;
        match &self.skip {
            Some(proj) => body.add(&proj.forward(x)?),
            None => body.add(x),
        }
    }

    fn stages(&self) -> Vec<(&'static str, &ConvStage)> {
        let mut v = vec![("a", &self.conv_a), ("b", &self.conv_b)];
        if let Some(s) = &self.skip {
            v.push(("skip", s));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionLevel {
    pub(crate) res1: ResidualBlock,
    pub(crate) res2: ResidualBlock,
}

impl FusionLevel {
    pub fn res1(&self) -> &ResidualBlock {
        &self.res1
    }

    pub fn res2(&self) -> &ResidualBlock {
        &self.res2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    channels: usize,
    /// Index 0 holds level 1.
    levels: [FusionLevel; PYRAMID_LEVELS],
    head: ConvStage,
    provenance: String,
}

fn level_input_channels(h: usize, c: usize) -> usize {
    if h == PYRAMID_LEVELS {
        2 * c
    } else {
        3 * c
    }
}

impl FusionWeights {
    /// `levels[0]` is level 1.
    pub fn new(
        levels: [FusionLevel; PYRAMID_LEVELS],
        head: ConvStage,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let channels = levels[0].res2.conv_b.out_channels();
        for (idx, level) in levels.iter().enumerate() {
            let h = idx + 1;
            let cin = level_input_channels(h, channels);
            if level.res1.in_channels() != cin || level.res1.conv_a.out_channels() != channels {
                return Err(Error::InvalidWeights(format!(
                    "fusion level {h}: first block must be {cin}->{channels}"
                )));
            }
            if level.res2.in_channels() != channels || level.res2.conv_a.out_channels() != channels {
                return Err(Error::InvalidWeights(format!(
                    "fusion level {h}: second block must be {channels}->{channels}"
                )));
            }
        }
        if head.in_channels() != channels
            || head.out_channels() != IMAGE_CHANNELS
            || head.resample() != Resample::Up2
        {
            return Err(Error::InvalidWeights(format!(
                "fusion head must be an upsampling {channels}->3 stage"
            )));
        }
        Ok(Self {
            channels,
            levels,
            head,
            provenance: provenance.into(),
        })
    }

    pub fn zeros(channels: usize) -> Result<Self> {
        let levels = build_levels(channels, ResidualBlock::zeros)?;
        let head = ConvStage::zeros(channels, IMAGE_CHANNELS, FUSION_KERNEL, Resample::Up2, None)?;
        Self::new(levels, head, "preset:zero")
    }

    /// Uniform `[-1, 1) / sqrt(fan_in)` weights, zero bias, from a
    /// [`SplitMix64`] stream seeded with `seed ^ FUSION_SEED_SALT`. Levels are
    /// drawn from 4 down to 1, then the head.
    pub fn seeded(seed: u64, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("channel count must be positive".into()));
        }
        let mut rng = SplitMix64::new(seed ^ FUSION_SEED_SALT);
        let mut by_level = Vec::with_capacity(PYRAMID_LEVELS);
        for h in (1..=PYRAMID_LEVELS).rev() {
            let cin = level_input_channels(h, channels);
            let res1 = ResidualBlock::seeded(&mut rng, cin, channels)?;
            let res2 = ResidualBlock::seeded(&mut rng, channels, channels)?;
            by_level.push(FusionLevel { res1, res2 });
        }
        by_level.reverse();
        let head = ConvStage::seeded(
            &mut rng,
            channels,
            IMAGE_CHANNELS,
            FUSION_KERNEL,
            Resample::Up2,
            None,
        )?;
        let levels = by_level.try_into().expect("four levels");
        Self::new(levels, head, format!("seed:{seed}"))
    }

    /// Replaces the first-stage image by the aligned side features: with
    /// the colour-carrying channels used by passthrough codec weights,
    /// `phi1 = aligned1 - main1` and the head upsamples it, so
    /// `x2 = x1 + up(aligned1 - main1)`. Levels 4..2 are zero.
    pub fn passthrough(channels: usize) -> Result<Self> {
        if channels < IMAGE_CHANNELS {
            return Err(Error::InvalidConfig(format!(
                "passthrough fusion needs at least 3 channels, got {channels}"
            )));
        }
        let mut levels = build_levels(channels, ResidualBlock::zeros)?;
        let cin = 3 * channels;
        let mut proj = vec![0f32; channels * cin];
        for o in 0..IMAGE_CHANNELS {
            proj[o * cin + o] = -1.0;
            proj[o * cin + channels + o] = 1.0;
        }
        levels[0].res1.skip = Some(ConvStage::new(
            cin,
            channels,
            1,
            Resample::Same,
            None,
            proj,
            vec![0.0; channels],
        )?);
        let head = ConvStage::selector(
            channels,
            IMAGE_CHANNELS,
            FUSION_KERNEL,
            Resample::Up2,
            None,
            |o| Some((o, 1.0)),
        )?;
        Self::new(levels, head, "preset:passthrough")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn level(&self, h: usize) -> &FusionLevel {
        &self.levels[h - 1]
    }

    pub fn head(&self) -> &ConvStage {
        &self.head
    }

    pub fn named_stages(&self) -> Vec<(String, &ConvStage)> {
        let mut out = Vec::new();
        for h in (1..=PYRAMID_LEVELS).rev() {
            let level = &self.levels[h - 1];
            for (block, res) in [("res1", &level.res1), ("res2", &level.res2)] {
                for (part, stage) in res.stages() {
                    out.push((format!("fusion.h{h}.{block}.{part}"), stage));
                }
            }
        }
        out.push(("fusion.head".to_string(), &self.head));
        out
    }

    /// Rebuilds from stages in [`FusionWeights::named_stages`] order; a
    /// block whose first conv changes the channel count consumes one extra
    /// stage as its projection skip.
    pub fn from_stage_list(stages: Vec<ConvStage>, provenance: impl Into<String>) -> Result<Self> {
        let mut it = stages.into_iter();
        let mut take = || {
            it.next()
                .ok_or_else(|| Error::InvalidWeights("fusion stage list too short".into()))
        };
        let mut by_level = Vec::with_capacity(PYRAMID_LEVELS);
        for _ in 0..PYRAMID_LEVELS {
            let mut blocks = Vec::with_capacity(2);
            for _ in 0..2 {
                let a = take()?;
                let b = take()?;
                let skip = if a.in_channels() != a.out_channels() {
                    Some(take()?)
                } else {
                    None
                };
                blocks.push(ResidualBlock::new(a, b, skip)?);
            }
            let res2 = blocks.pop().expect("two blocks");
            let res1 = blocks.pop().expect("two blocks");
            by_level.push(FusionLevel { res1, res2 });
        }
        let head = take()?;
        if it.next().is_some() {
            return Err(Error::InvalidWeights("fusion stage list too long".into()));
        }
        by_level.reverse();
        Self::new(by_level.try_into().expect("four levels"), head, provenance)
    }
}

fn build_levels(
    channels: usize,
    mut block: impl FnMut(usize, usize) -> Result<ResidualBlock>,
) -> Result<[FusionLevel; PYRAMID_LEVELS]> {
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    for h in 1..=PYRAMID_LEVELS {
        levels.push(FusionLevel {
            res1: block(level_input_channels(h, channels), channels)?,
            res2: block(channels, channels)?,
        });
    }
    Ok(levels.try_into().expect("four levels"))
}

/// One fusion iteration, producing `phi^h`. Level 4 takes no `prev`;
/// levels 3..1 need `phi^(h+1)`.
pub fn fuse_level(
    h: usize,
    main_h: &FeatureMap,
    aligned_h: &FeatureMap,
    prev: Option<&FeatureMap>,
    weights: &FusionWeights,
) -> Result<FeatureMap> {
    if !(1..=PYRAMID_LEVELS).contains(&h) {
        return Err(Error::InvalidConfig(format!("fusion level {h} out of range")));
    }
    if !main_h.same_shape(aligned_h) {
        return Err(Error::geometry(format!(
            "level {h}: main {:?} and aligned {:?} differ",
            main_h.dims(),
            aligned_h.dims()
        )));
    }
    let level = weights.level(h);
    let up = match (h, prev) {
        (PYRAMID_LEVELS, None) => None,
        (PYRAMID_LEVELS, Some(_)) => {
            return Err(Error::ContractViolation("level 4 has no previous output".into()))
        }
        (_, None) => {
            return Err(Error::ContractViolation(format!(
                "level {h} needs the level {} output",
                h + 1
            )))
        }
        (_, Some(p)) => {
            let up = p.upsample2();
            if up.height() != main_h.height() || up.width() != main_h.width() {
                return Err(Error::geometry(format!(
                    "level {h}: previous output {:?} does not upsample to {}x{}",
                    p.dims(),
                    main_h.height(),
                    main_h.width()
                )));
            }
            Some(up)
        }
    };
    let cat = match &up {
        Some(u) => FeatureMap::concat_channels(&[main_h, aligned_h, u])?,
        None => FeatureMap::concat_channels(&[main_h, aligned_h])?,
    };
    let mut z = level.res1.forward(&cat)?;
    if let Some(u) = &up {
        z = z.add(u)?;
    }
    level.res2.forward(&z)
}

/// Runs [`fuse_level`] from level 4 down to 1 and returns `phi^1`.
pub fn fuse_all(
    main: &FeaturePyramid,
    aligned: &FeaturePyramid,
    weights: &FusionWeights,
) -> Result<FeatureMap> {
    let mut phi = fuse_level(PYRAMID_LEVELS, main.level(4), aligned.level(4), None, weights)?;
    for h in (1..PYRAMID_LEVELS).rev() {
        phi = fuse_level(h, main.level(h), aligned.level(h), Some(&phi), weights)?;
    }
    Ok(phi)
}

/// Second-stage image `head(phi1) + x1`, unclamped.
pub fn reconstruct(phi1: &FeatureMap, x_hat_1: &FeatureMap, weights: &FusionWeights) -> Result<FeatureMap> {
    let residual = weights.head.forward(phi1)?;
    if !residual.same_shape(x_hat_1) {
        return Err(Error::geometry(format!(
            "head output {:?} does not match first-stage image {:?}",
            residual.dims(),
            x_hat_1.dims()
        )));
    }
    residual.add(x_hat_1)
}
