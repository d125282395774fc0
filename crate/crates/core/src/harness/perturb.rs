use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use super::image_io::{from_rgb32f, to_rgb32f};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Brightness,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub factor: f64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "perturbation factor must be positive, got {factor}"
            )));
        }
        Ok(Self { kind, factor })
    }
}

/// Brightness multiplies every value and clamps to `[0, 1]`. Scale resizes
/// with a linear filter, then centre-pads with zeros or centre-crops back
/// to the input dims. Factor 1 returns the input unchanged.
pub fn perturb(image: &FeatureMap, spec: PerturbSpec) -> Result<FeatureMap> {
    let spec = PerturbSpec::new(spec.kind, spec.factor)?;
    if spec.factor == 1.0 {
        return Ok(image.clone());
    }
    match spec.kind {
        PerturbKind::Brightness => {
            let f = spec.factor as f32;
            Ok(image.map(|v| (v * f).clamp(0.0, 1.0)))
        }
        PerturbKind::Scale => {
            let (h, w) = (image.height(), image.width());
            let nh = ((h as f64 * spec.factor).round() as usize).max(1);
            let nw = ((w as f64 * spec.factor).round() as usize).max(1);
            let resized = imageops::resize(&to_rgb32f(image)?, nw as u32, nh as u32, FilterType::Triangle);
            fit(&from_rgb32f(resized), h, w)
        }
    }
}

/// Centre-crops or zero-pads each axis independently to `h x w`.
fn fit(src: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
    let c = src.channels();
    let mut out = FeatureMap::zeros(h, w, c)?;
    let span = |from: usize, to: usize| {
        if from >= to {
            ((from - to) / 2, 0, to)
        } else {
            (0, (to - from) / 2, from)
        }
    };
    let (sr, dr, nr) = span(src.height(), h);
    let (sc, dc, nc) = span(src.width(), w);
    for r in 0..nr {
        let from = src.index(sr + r, sc, 0);
        let to = out.index(dr + r, dc, 0);
        out.data_mut()[to..to + nc * c].copy_from_slice(&src.data()[from..from + nc * c]);
    }
    Ok(out)
}
