//! Multi-scale SSIM on BT.601 luma with an 11x11 Gaussian window.

use serde::{Deserialize, Serialize};

use super::check_pair;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Dynamic range of the normalised images.
const RANGE: f64 = 1.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsSsim {
    pub value: f64,
    /// Number of scales evaluated; below 5 when the image is too small for
    /// the window at the coarser scales. Weights are renormalised over the
    /// scales used.
    pub scales: usize,
}

pub fn ms_ssim(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    ms_ssim_detailed(a, b).map(|m| m.value)
}

/// Accepts 3-channel RGB (converted to luma) or single-channel images with
/// values in `[0, 1]`. Contrast-structure and luminance terms are clamped
/// at zero, so the result lies in `[0, 1]`.
pub fn ms_ssim_detailed(a: &FeatureMap, b: &FeatureMap) -> Result<MsSsim> {
    check_pair(a, b, "ms-ssim")?;
    let (h, w, _) = a.dims();
    let scales = (1..=MS_SSIM_WEIGHTS.len())
        .take_while(|&s| (h >> (s - 1)) >= SSIM_WINDOW && (w >> (s - 1)) >= SSIM_WINDOW)
        .count();
    if scales == 0 {
        return Err(Error::InvalidInput(format!(
            "ms-ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let window = gaussian_window();

    let mut x = Plane::luma(a)?;
    let mut y = Plane::luma(b)?;
    let mut value = 1.0;
    for (s, &wt) in weights.iter().enumerate() {
        let (lum, cs) = ssim_terms(&x, &y, &window);
        let term = if s + 1 == scales { lum * cs } else { cs };
        value *= term.max(0.0).powf(wt / total);
        if s + 1 < scales {
            x = x.halve();
            y = y.halve();
        }
    }
    Ok(MsSsim { value, scales })
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn luma(img: &FeatureMap) -> Result<Self> {
        let (h, w, c) = img.dims();
        let v = match c {
            1 => img.data().iter().map(|&x| f64::from(x)).collect(),
            3 => img
                .data()
                .chunks_exact(3)
                .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
                .collect(),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "ms-ssim expects 1 or 3 channels, got {c}"
                )))
            }
        };
        Ok(Self { h, w, v })
    }

    /// 2x2 box average; a trailing odd row or column is dropped.
    fn halve(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |dr: usize, dc: usize| self.v[(2 * r + dr) * self.w + 2 * c + dc];
                v.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * 0.25);
            }
        }
        Self { h, w, v }
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g
}

/// Separable valid-mode filtering of `f(x, y)` per pixel.
fn filter(p: &Plane, g: &[f64; SSIM_WINDOW], src: &[f64]) -> Vec<f64> {
    let ow = p.w - SSIM_WINDOW + 1;
    let oh = p.h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; p.h * ow];
    for r in 0..p.h {
        let line = &src[r * p.w..(r + 1) * p.w];
        for c in 0..ow {
            rows[r * ow + c] = g.iter().zip(&line[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = g
                .iter()
                .enumerate()
                .map(|(t, wt)| wt * rows[(r + t) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean luminance and mean contrast-structure terms at one scale. Every
/// expression is symmetric in `x` and `y` under IEEE arithmetic.
fn ssim_terms(x: &Plane, y: &Plane, g: &[f64; SSIM_WINDOW]) -> (f64, f64) {
    let c1 = (K1 * RANGE).powi(2);
    let c2 = (K2 * RANGE).powi(2);
    let xx: Vec<f64> = x.v.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.v.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.v.iter().zip(&y.v).map(|(a, b)| a * b).collect();
    let mu_x = filter(x, g, &x.v);
    let mu_y = filter(y, g, &y.v);
    let e_xx = filter(x, g, &xx);
    let e_yy = filter(y, g, &yy);
    let e_xy = filter(x, g, &xy);
    let n = mu_x.len() as f64;
    let (mut lum, mut cs) = (0.0, 0.0);
    for t in 0..mu_x.len() {
        let mxy = mu_x[t] * mu_y[t];
        let var_x = e_xx[t] - mu_x[t] * mu_x[t];
        let var_y = e_yy[t] - mu_y[t] * mu_y[t];
        let cov = e_xy[t] - mxy;
        lum += (2.0 * mxy + c1) / (mu_x[t] * mu_x[t] + mu_y[t] * mu_y[t] + c1);
        cs += (2.0 * cov + c2) / (var_x + var_y + c2);
    }
    (lum / n, cs / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn noise(h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::from_fn(h, w, 3, |_, _, _| rng.next_f64() as f32).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let a = noise(180, 200, 1);
        let m = ms_ssim_detailed(&a, &a).unwrap();
        assert_eq!(m.value, 1.0);
        assert_eq!(m.scales, 5);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = noise(64, 96, 2);
        let b = noise(64, 96, 3);
        let ab = ms_ssim(&a, &b).unwrap();
        assert_eq!(ab, ms_ssim(&b, &a).unwrap());
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn inverted_image_scores_low() {
        let a = FeatureMap::from_fn(96, 96, 3, |r, c, ch| {
            (0.5 + 0.4 * ((r as f32 * 0.3).sin() * (c as f32 * 0.2 + ch as f32).cos())).clamp(0.0, 1.0)
        })
        .unwrap();
        let inv = a.map(|v| 1.0 - v);
        assert!(ms_ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn scale_fallback() {
        let a = noise(48, 48, 4);
        assert_eq!(ms_ssim_detailed(&a, &a).unwrap().scales, 3);
        let tiny = noise(10, 40, 5);
        assert!(ms_ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn window_matches_reference_taps() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // centre tap of the normalised 11-tap sigma 1.5 kernel
        assert!((g[5] - 0.266_011_724_86).abs() < 1e-10, "{}", g[5]);
    }
}
