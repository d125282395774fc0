use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::pipeline::{Pipeline, REPORT_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::matcher::{
    align_all_levels, align_per_level, build_mask, correlation_field, level_patch_size,
    per_level_fields, reuse_disagreement,
};
use crate::tensor::{FeatureMap, PYRAMID_LEVELS};

pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// Median of correlation, argmax and alignment over all levels.
    pub matching_ms: f64,
    /// Median time to build the Gaussian masks alone.
    pub mask_ms: f64,
    /// Bytes held by the correlation fields and masks.
    pub field_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub repetitions: usize,
    pub reuse: PathStats,
    pub no_reuse: PathStats,
    /// Level-1 aligned features agree between the two paths.
    pub level1_identical: bool,
    /// Per-level agreement of aligned features, levels 1..=4.
    pub levels_identical: [bool; PYRAMID_LEVELS],
    /// Fraction of main patches at levels 2, 3, 4 whose reused index
    /// differs from the directly matched one.
    pub disagreement: [f64; 3],
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times matching with level-1 reuse against matching every level
/// independently. Feature extraction runs once, untimed. Repetitions of
/// the two paths are interleaved so drift affects both alike.
pub fn bench_reuse(
    main: &FeatureMap,
    side: &FeatureMap,
    config: &PipelineConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::InvalidConfig(format!(
            "bench needs at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let pipeline = Pipeline::new(config.clone())?;
    let (main, side, _) = pipeline.crop_pair(main, side)?;
    let f = pipeline.features(&main, &side)?;
    let (b, sigma) = (config.patch_size, config.sigma());

    let mut reuse_t = Vec::with_capacity(repetitions);
    let mut plain_t = Vec::with_capacity(repetitions);
    let mut reuse_mask_t = Vec::with_capacity(repetitions);
    let mut plain_mask_t = Vec::with_capacity(repetitions);
    let reuse_path = || -> Result<_> {
        let field = correlation_field(f.main.level(1), f.side.level(1), b, sigma)?;
        let aligned = align_all_levels(&field, &f.lossless, b)?;
        Ok((field, aligned))
    };
    let plain_path = || -> Result<_> {
        let fields = per_level_fields(&f.main, &f.side, b, sigma)?;
        let aligned = align_per_level(&fields, &f.lossless)?;
        Ok((fields, aligned))
    };
    // untimed warm-up so neither path pays for first-touch allocation
    reuse_path()?;
    plain_path()?;

    let mut last = None;
    for rep in 0..repetitions {
        // alternate which path goes first so ordering effects cancel
        let mut timed_reuse = || -> Result<_> {
            let t = Instant::now();
            let out = reuse_path()?;
            reuse_t.push(t.elapsed().as_secs_f64() * 1e3);
            Ok(out)
        };
        let mut timed_plain = || -> Result<_> {
            let t = Instant::now();
            let out = plain_path()?;
            plain_t.push(t.elapsed().as_secs_f64() * 1e3);
            Ok(out)
        };
        let ((field, aligned_reuse), (fields, aligned_plain)) = if rep % 2 == 0 {
            let r = timed_reuse()?;
            (r, timed_plain()?)
        } else {
            let p = timed_plain()?;
            (timed_reuse()?, p)
        };

        let t = Instant::now();
        let mask = build_mask(f.main.level(1), f.side.level(1), b, sigma)?;
        reuse_mask_t.push(t.elapsed().as_secs_f64() * 1e3);

        let t = Instant::now();
        let mut masks = Vec::with_capacity(PYRAMID_LEVELS);
        for h in 1..=PYRAMID_LEVELS {
            let sigma_h = sigma / (1u64 << (h - 1)) as f64;
            masks.push(build_mask(f.main.level(h), f.side.level(h), level_patch_size(b, h)?, sigma_h)?);
        }
        plain_mask_t.push(t.elapsed().as_secs_f64() * 1e3);

        last = Some((field, aligned_reuse, fields, aligned_plain, mask, masks));
    }
    let (field, aligned_reuse, fields, aligned_plain, mask, masks) = last.expect("repetitions >= 5");

    let mut levels_identical = [false; PYRAMID_LEVELS];
    for (h, same) in levels_identical.iter_mut().enumerate() {
        *same = aligned_reuse.level(h + 1) == aligned_plain.level(h + 1);
    }
    let mut disagreement = [0.0; 3];
    for h in 2..=PYRAMID_LEVELS {
        disagreement[h - 2] = reuse_disagreement(&field, &fields[h - 1], h)?;
    }
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        height: main.height(),
        width: main.width(),
        patch_size: b,
        channels: config.channels,
        repetitions,
        reuse: PathStats {
            matching_ms: median(reuse_t),
            mask_ms: median(reuse_mask_t),
            field_bytes: field.heap_bytes() + mask.heap_bytes(),
        },
        no_reuse: PathStats {
            matching_ms: median(plain_t),
            mask_ms: median(plain_mask_t),
            field_bytes: fields.iter().map(|f| f.heap_bytes()).sum::<usize>()
                + masks.iter().map(|m| m.heap_bytes()).sum::<usize>(),
        },
        level1_identical: levels_identical[0],
        levels_identical,
        disagreement,
    })
}
