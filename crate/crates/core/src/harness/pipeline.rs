use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::image_io::{center_crop_to, CropInfo};
use crate::bundle::ModelWeights;
use crate::error::{Error, Result};
use crate::extractor::{decode_multiscale, encode, extract_lossless_features, Latent};
use crate::fusion::{fuse_all, reconstruct};
use crate::matcher::{
    align_all_levels, align_per_level, correlation_field, per_level_fields, reuse_disagreement,
    CorrelationField,
};
use crate::metrics::{bpp_estimate, ms_ssim_detailed, mse, psnr_from_mse, rd_loss};
use crate::tensor::{FeatureMap, FeaturePyramid, PYRAMID_LEVELS};

/// Bumped whenever a report field changes meaning or shape.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Peak value of normalised images.
const PEAK: f64 = 1.0;

/// First- and second-stage values of one metric. Non-finite values (PSNR
/// of a perfect reconstruction) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePair {
    pub x_hat_1: Option<f64>,
    pub x_hat_2: Option<f64>,
}

impl StagePair {
    fn new(a: f64, b: f64) -> Self {
        Self {
            x_hat_1: finite(a),
            x_hat_2: finite(b),
        }
    }

    /// `x_hat_2 - x_hat_1` when both are finite.
    pub fn improvement(&self) -> Option<f64> {
        Some(self.x_hat_2? - self.x_hat_1?)
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub patch_size: usize,
    pub channels: usize,
    pub sigma: f64,
    pub q: f32,
    pub lambda: f64,
    pub alpha: f64,
    pub reuse: bool,
    pub weights: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSummary {
    pub main_patches: usize,
    pub side_candidates: usize,
    /// Mean masked score of the selected side patch.
    pub mean_best_score: f64,
    /// Fraction of main patches at levels 2, 3, 4 whose reused index
    /// differs from direct matching; only computed without reuse.
    pub reuse_disagreement: Option<[f64; 3]>,
}

/// Deterministic part of a pipeline run: identical inputs and
/// configuration give an identical report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: ReportConfig,
    pub crop: CropInfo,
    pub bpp_entropy_bound: f64,
    pub latent_symbols: usize,
    pub psnr_db: StagePair,
    pub ms_ssim: StagePair,
    pub ms_ssim_scales: usize,
    pub mse: StagePair,
    pub rd_loss: f64,
    /// Curve-level metrics; `None` for a single evaluated pair.
    pub bd_rate_p: Option<f64>,
    pub bd_rate_m: Option<f64>,
    pub pr: Option<f64>,
    pub matching: MatchingSummary,
}

/// Wall-clock milliseconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub extraction_ms: f64,
    pub matching_ms: f64,
    pub alignment_ms: f64,
    pub fusion_ms: f64,
    pub metrics_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// First-stage image, clamped to `[0, 1]`.
    pub x_hat_1: FeatureMap,
    /// Second-stage image, clamped to `[0, 1]`.
    pub x_hat_2: FeatureMap,
    /// The cropped main image the metrics were computed against.
    pub reference: FeatureMap,
    pub latent: Latent,
    pub best_indices: Vec<(usize, usize)>,
    pub report: PipelineReport,
    pub timings: Timings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Decoded and lossless features of one cropped main/side pair.
pub(crate) struct Features {
    pub latent: Latent,
    pub main: FeaturePyramid,
    pub x_hat_1: FeatureMap,
    pub side: FeaturePyramid,
    pub lossless: FeaturePyramid,
}

/// A validated configuration with its weights resolved once.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    weights: ModelWeights,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let weights = config.resolve_weights()?;
        Self::with_weights(config, weights)
    }

    pub fn with_weights(config: PipelineConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        if weights.channels() != config.channels {
            return Err(Error::InvalidConfig(format!(
                "weights have {} channels, configuration asks for {}",
                weights.channels(),
                config.channels
            )));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn q(&self) -> f32 {
        self.config.q.unwrap_or(self.weights.q)
    }

    /// Checks that both images share dims and centre-crops them to the
    /// configured alignment.
    pub fn crop_pair(
        &self,
        main: &FeatureMap,
        side: &FeatureMap,
    ) -> Result<(FeatureMap, FeatureMap, CropInfo)> {
        if main.dims() != side.dims() {
            return Err(Error::geometry(format!(
                "main image {:?} and side image {:?} differ in shape",
                main.dims(),
                side.dims()
            ))
            .in_stage("crop"));
        }
        let align = self.config.alignment();
        let (m, info) = center_crop_to(main, align).map_err(|e| e.in_stage("crop"))?;
        let (s, _) = center_crop_to(side, align).map_err(|e| e.in_stage("crop"))?;
        Ok((m, s, info))
    }

    /// Main and side paths run concurrently; they share only the weights.
    pub(crate) fn features(&self, main: &FeatureMap, side: &FeatureMap) -> Result<Features> {
        let codec = &self.weights.codec;
        let q = self.q();
        let (main_path, side_path) = rayon::join(
            || -> Result<_> {
                let latent = encode(main, codec, q).map_err(|e| e.in_stage("encode"))?;
                let (pyr, x1) = decode_multiscale(&latent, codec).map_err(|e| e.in_stage("decode"))?;
                Ok((latent, pyr, x1))
            },
            || -> Result<_> {
                let latent = encode(side, codec, q).map_err(|e| e.in_stage("encode"))?;
                let (pyr, _) = decode_multiscale(&latent, codec).map_err(|e| e.in_stage("decode"))?;
                let lossless = extract_lossless_features(side, codec).map_err(|e| e.in_stage("extract"))?;
                Ok((pyr, lossless))
            },
        );
        let (latent, main_pyr, x_hat_1) = main_path?;
        let (side_pyr, lossless) = side_path?;
        Ok(Features {
            latent,
            main: main_pyr,
            x_hat_1,
            side: side_pyr,
            lossless,
        })
    }

    pub fn run(&self, main: &FeatureMap, side: &FeatureMap) -> Result<PipelineOutput> {
        let start = Instant::now();
        let cfg = &self.config;
        let (main, side, crop) = self.crop_pair(main, side)?;
        let mut timings = Timings::default();

        let t = Instant::now();
        let f = self.features(&main, &side)?;
        timings.extraction_ms = ms(t);

        let (b, sigma) = (cfg.patch_size, cfg.sigma());
        let t = Instant::now();
        let (level1, per_level): (CorrelationField, Option<[CorrelationField; PYRAMID_LEVELS]>) =
            if cfg.reuse {
                let field = correlation_field(f.main.level(1), f.side.level(1), b, sigma)
                    .map_err(|e| e.in_stage("match"))?;
                (field, None)
            } else {
                let fields =
                    per_level_fields(&f.main, &f.side, b, sigma).map_err(|e| e.in_stage("match"))?;
                (fields[0].clone(), Some(fields))
            };
        timings.matching_ms = ms(t);

        let t = Instant::now();
        let aligned = match &per_level {
            None => align_all_levels(&level1, &f.lossless, b),
            Some(fields) => align_per_level(fields, &f.lossless),
        }
        .map_err(|e| e.in_stage("align"))?;
        timings.alignment_ms = ms(t);

        let t = Instant::now();
        let phi1 = fuse_all(&f.main, &aligned, &self.weights.fusion).map_err(|e| e.in_stage("fuse"))?;
        let x2_raw = reconstruct(&phi1, &f.x_hat_1, &self.weights.fusion)
            .map_err(|e| e.in_stage("reconstruct"))?;
        let x_hat_1 = f.x_hat_1.clamp(0.0, 1.0);
        let x_hat_2 = x2_raw.clamp(0.0, 1.0);
        timings.fusion_ms = ms(t);

        let t = Instant::now();
        let metrics = || -> Result<_> {
            let (h, w) = (main.height(), main.width());
            let bpp = bpp_estimate(&f.latent, h, w)?;
            let d1 = mse(&main, &x_hat_1)?;
            let d2 = mse(&main, &x_hat_2)?;
            let s1 = ms_ssim_detailed(&main, &x_hat_1)?;
            let s2 = ms_ssim_detailed(&main, &x_hat_2)?;
            let loss = rd_loss(bpp, d1, d2, cfg.lambda, cfg.alpha)?;
            let disagreement = match &per_level {
                None => None,
                Some(fields) => {
                    let mut d = [0.0; 3];
                    for h in 2..=PYRAMID_LEVELS {
                        d[h - 2] = reuse_disagreement(&fields[0], &fields[h - 1], h)?;
                    }
                    Some(d)
                }
            };
            let main_grid = level1.main_grid();
            let mean_best = main_grid
                .indices()
                .map(|(i, j)| {
                    let (k, l) = level1.best(i, j);
                    level1.score(i, j, k, l)
                })
                .sum::<f64>()
                / main_grid.len() as f64;
            Ok(PipelineReport {
                schema_version: REPORT_SCHEMA_VERSION,
                config: ReportConfig {
                    patch_size: b,
                    channels: cfg.channels,
                    sigma,
                    q: self.q(),
                    lambda: cfg.lambda,
                    alpha: cfg.alpha,
                    reuse: cfg.reuse,
                    weights: self.weights.provenance(),
                },
                crop,
                bpp_entropy_bound: bpp,
                latent_symbols: f.latent.map().data().len(),
                psnr_db: StagePair::new(psnr_from_mse(d1, PEAK), psnr_from_mse(d2, PEAK)),
                ms_ssim: StagePair::new(s1.value, s2.value),
                ms_ssim_scales: s1.scales,
                mse: StagePair::new(d1, d2),
                rd_loss: loss,
                bd_rate_p: None,
                bd_rate_m: None,
                pr: None,
                matching: MatchingSummary {
                    main_patches: main_grid.len(),
                    side_candidates: level1.side_grid().len(),
                    mean_best_score: mean_best,
                    reuse_disagreement: disagreement,
                },
            })
        };
        let report = metrics().map_err(|e| e.in_stage("metrics"))?;
        timings.metrics_ms = ms(t);
        timings.total_ms = ms(start);

        Ok(PipelineOutput {
            x_hat_1,
            x_hat_2,
            reference: main,
            latent: f.latent,
            best_indices: level1.best_indices().to_vec(),
            report,
            timings,
        })
    }
}

/// Builds a [`Pipeline`] for `config` and runs it once.
pub fn run_pipeline(main: &FeatureMap, side: &FeatureMap, config: &PipelineConfig) -> Result<PipelineOutput> {
    Pipeline::new(config.clone())?.run(main, side)
}
