//! Bjøntegaard delta rate between two rate-distortion curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::RdCurve;
use crate::error::{Error, Result};

/// Trapezoidal samples across the overlapping quality interval.
pub const BD_SAMPLES: usize = 1000;

const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityField {
    Psnr,
    MsSsim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdMethod {
    /// Least-squares cubic of `log10(bpp)` in quality.
    #[default]
    Cubic,
    /// Piecewise cubic Hermite interpolation through the points.
    Pchip,
}

/// Average bitrate difference of `test` against `reference` at equal
/// quality, in percent. Negative means `test` needs fewer bits.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve, field: QualityField) -> Result<f64> {
    bd_rate_with(reference, test, field, BdMethod::Cubic)
}

pub fn bd_rate_with(
    reference: &RdCurve,
    test: &RdCurve,
    field: QualityField,
    method: BdMethod,
) -> Result<f64> {
    let r = LogRate::from_curve(reference, field, method)?;
    let t = LogRate::from_curve(test, field, method)?;
    let lo = r.q_min().max(t.q_min());
    let hi = r.q_max().min(t.q_max());
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let avg = (integrate(|q| t.eval(q), lo, hi) - integrate(|q| r.eval(q), lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let step = (hi - lo) / (BD_SAMPLES - 1) as f64;
    let mut acc = 0.0;
    let mut prev = f(lo);
    for s in 1..BD_SAMPLES {
        let q = if s == BD_SAMPLES - 1 { hi } else { lo + step * s as f64 };
        let cur = f(q);
        acc += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    acc
}

/// `log10(bpp)` as a function of quality.
enum LogRate {
    Cubic {
        coeffs: [f64; 4],
        centre: f64,
        scale: f64,
        range: (f64, f64),
    },
    Pchip {
        q: Vec<f64>,
        v: Vec<f64>,
        d: Vec<f64>,
    },
}

impl LogRate {
    fn from_curve(curve: &RdCurve, field: QualityField, method: BdMethod) -> Result<Self> {
        if curve.len() < MIN_POINTS {
            return Err(Error::InvalidInput(format!(
                "bd-rate needs at least {MIN_POINTS} points per curve, got {}",
                curve.len()
            )));
        }
        let mut pts = Vec::with_capacity(curve.len());
        for p in curve.points() {
            let q = p.quality(field);
            if !q.is_finite() || p.bpp <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "bd-rate needs finite quality and positive bpp, got ({}, {q})",
                    p.bpp
                )));
            }
            pts.push((q, p.bpp.log10()));
        }
        match method {
            BdMethod::Cubic => Self::cubic(&pts),
            BdMethod::Pchip => Self::pchip(pts),
        }
    }

    fn cubic(pts: &[(f64, f64)]) -> Result<Self> {
        let n = pts.len() as f64;
        let centre = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let spread = pts.iter().map(|p| (p.0 - centre).abs()).fold(0.0, f64::max);
        if spread == 0.0 {
            return Err(Error::InvalidInput("bd-rate curve has constant quality".into()));
        }
        let a = DMatrix::from_fn(pts.len(), 4, |r, c| ((pts[r].0 - centre) / spread).powi(c as i32));
        let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
        let x = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::InvalidInput(format!("cubic fit failed: {e}")))?;
        let q_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let q_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self::Cubic {
            coeffs: [x[0], x[1], x[2], x[3]],
            centre,
            scale: spread,
            range: (q_min, q_max),
        })
    }

    fn pchip(mut pts: Vec<(f64, f64)>) -> Result<Self> {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(
                "piecewise interpolation needs distinct quality values".into(),
            ));
        }
        let q: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let v: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let d = pchip_slopes(&q, &v);
        Ok(Self::Pchip { q, v, d })
    }

    fn q_min(&self) -> f64 {
        match self {
            Self::Cubic { range, .. } => range.0,
            Self::Pchip { q, .. } => q[0],
        }
    }

    fn q_max(&self) -> f64 {
        match self {
            Self::Cubic { range, .. } => range.1,
            Self::Pchip { q, .. } => q[q.len() - 1],
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Cubic {
                coeffs,
                centre,
                scale,
                ..
            } => {
                let t = (x - centre) / scale;
                ((coeffs[3] * t + coeffs[2]) * t + coeffs[1]) * t + coeffs[0]
            }
            Self::Pchip { q, v, d } => {
                let k = q.partition_point(|&qi| qi <= x).clamp(1, q.len() - 1) - 1;
                let h = q[k + 1] - q[k];
                let t = (x - q[k]) / h;
                let (t2, t3) = (t * t, t * t * t);
                (2.0 * t3 - 3.0 * t2 + 1.0) * v[k]
                    + (t3 - 2.0 * t2 + t) * h * d[k]
                    + (-2.0 * t3 + 3.0 * t2) * v[k + 1]
                    + (t3 - t2) * h * d[k + 1]
            }
        }
    }
}

/// Fritsch-Carlson monotone slopes with the usual three-point end rule.
fn pchip_slopes(q: &[f64], v: &[f64]) -> Vec<f64> {
    let n = q.len();
    let h: Vec<f64> = q.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (v[k + 1] - v[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let s = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if s.signum() != m0.signum() {
            0.0
        } else if m0.signum() != m1.signum() && s.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RdPoint;

    fn curve(scale: f64) -> RdCurve {
        let pts = [(0.1, 30.0), (0.2, 32.5), (0.4, 35.1), (0.8, 37.2), (1.6, 38.9)];
        RdCurve::new(
            pts.iter()
                .map(|&(b, q)| RdPoint::new(b * scale, q, 0.9 + (q - 30.0) * 0.01).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_curves() {
        for m in [BdMethod::Cubic, BdMethod::Pchip] {
            assert_eq!(bd_rate_with(&curve(1.0), &curve(1.0), QualityField::Psnr, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn halved_and_doubled() {
        for m in [BdMethod::Cubic, BdMethod::Pchip] {
            for f in [QualityField::Psnr, QualityField::MsSsim] {
                let half = bd_rate_with(&curve(1.0), &curve(0.5), f, m).unwrap();
                let double = bd_rate_with(&curve(1.0), &curve(2.0), f, m).unwrap();
                assert!((half + 50.0).abs() < 1e-9, "{half}");
                assert!((double - 100.0).abs() < 1e-9, "{double}");
            }
        }
    }

    #[test]
    fn reciprocal_relation() {
        for s in [0.9, 1.1] {
            let ab = bd_rate(&curve(1.0), &curve(s), QualityField::Psnr).unwrap();
            let ba = bd_rate(&curve(s), &curve(1.0), QualityField::Psnr).unwrap();
            assert!((ab + ba / (1.0 + ba / 100.0)).abs() < 1.0);
        }
    }

    #[test]
    fn rejects_short_and_disjoint() {
        let short = RdCurve::new(curve(1.0).points()[..3].to_vec()).unwrap();
        assert!(matches!(
            bd_rate(&short, &curve(1.0), QualityField::Psnr),
            Err(Error::InvalidInput(_))
        ));
        let shifted = RdCurve::new(
            curve(1.0)
                .points()
                .iter()
                .map(|p| RdPoint::new(p.bpp, p.psnr + 20.0, p.ms_ssim).unwrap())
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            bd_rate(&curve(1.0), &shifted, QualityField::Psnr),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn pchip_interpolates_points() {
        let q = [1.0, 2.0, 4.0, 5.0];
        let v = [0.0, 1.0, 1.5, 3.0];
        let lr = LogRate::Pchip {
            q: q.to_vec(),
            v: v.to_vec(),
            d: pchip_slopes(&q, &v),
        };
        for (x, y) in q.iter().zip(v) {
            assert!((lr.eval(*x) - y).abs() < 1e-12);
        }
    }
}
