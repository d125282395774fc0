//! Distortion, rate and rate-distortion summaries.

mod bd;
mod rate;
mod ssim;

pub use bd::{bd_rate, bd_rate_with, BdMethod, QualityField, BD_SAMPLES};
pub use rate::{bpp_estimate, symbol_entropy};
pub use ssim::{ms_ssim, ms_ssim_detailed, MsSsim, MS_SSIM_WEIGHTS, SSIM_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

fn check_pair(a: &FeatureMap, b: &FeatureMap, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput(format!(
            "{what} on images of shape {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared error over all samples, accumulated in f64 in storage order.
pub fn mse(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(peak^2 / mse)`. Identical images give `f64::INFINITY`, which
/// JSON reports write as `null`.
pub fn psnr(a: &FeatureMap, b: &FeatureMap, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Domain(format!("psnr peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `H + lambda * ((1 - alpha) * d1 + alpha * d2)`.
pub fn rd_loss(entropy_bits: f64, d1: f64, d2: f64, lambda: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok(entropy_bits + lambda * ((1.0 - alpha) * d1 + alpha * d2))
}

/// Fraction of a quality gain lost after a change, `1 - after / before`.
/// Exceeds 1 when the gain turns negative.
pub fn performance_reduction(gain_before: f64, gain_after: f64) -> Result<f64> {
    if gain_before == 0.0 || !gain_before.is_finite() {
        return Err(Error::UndefinedPr);
    }
    Ok(1.0 - gain_after / gain_before)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
}

impl RdPoint {
    pub fn new(bpp: f64, psnr: f64, ms_ssim: f64) -> Result<Self> {
        if !(bpp >= 0.0 && bpp.is_finite()) {
            return Err(Error::InvalidInput(format!("bpp must be non-negative, got {bpp}")));
        }
        if !(0.0..=1.0).contains(&ms_ssim) {
            return Err(Error::InvalidInput(format!("ms-ssim must lie in [0, 1], got {ms_ssim}")));
        }
        if psnr.is_nan() {
            return Err(Error::InvalidInput("psnr is NaN".into()));
        }
        Ok(Self { bpp, psnr, ms_ssim })
    }

    pub fn quality(&self, field: QualityField) -> f64 {
        match field {
            QualityField::Psnr => self.psnr,
            QualityField::MsSsim => self.ms_ssim,
        }
    }
}

/// Rate-distortion points ordered by strictly increasing bpp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RdPoint>", into = "Vec<RdPoint>")]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(points: Vec<RdPoint>) -> Result<Self> {
        for p in &points {
            RdPoint::new(p.bpp, p.psnr, p.ms_ssim)?;
        }
        if points.windows(2).any(|w| w[1].bpp <= w[0].bpp) {
            return Err(Error::InvalidInput("rd curve bpp must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl TryFrom<Vec<RdPoint>> for RdCurve {
    type Error = Error;

    fn try_from(points: Vec<RdPoint>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<RdCurve> for Vec<RdPoint> {
    fn from(c: RdCurve) -> Self {
        c.points
    }
}
