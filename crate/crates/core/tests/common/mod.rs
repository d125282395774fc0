//! Independent reference implementations shared by the integration tests.
//! Everything here is written from the defining formulas with plain loops
//! and f64 arithmetic, and avoids the crate's own kernels.
#![allow(dead_code)]

use msfdpm::conv::{ConvStage, Resample};
use msfdpm::fusion::{FusionWeights, ResidualBlock};
use msfdpm::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1)`.
pub fn noise_map(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureMap::from_vec(h, w, c, data).unwrap()
}

/// Uniform values in `[0, 1)`.
pub fn noise_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..h * w * 3).map(|_| rng.random_range(0.0f32..1.0)).collect();
    FeatureMap::from_vec(h, w, 3, data).unwrap()
}

fn window(map: &FeatureMap, top: usize, left: usize, b: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(b * b * map.channels());
    for r in top..top + b {
        for c in left..left + b {
            for ch in 0..map.channels() {
                v.push(f64::from(map.get(r, c, ch)));
            }
        }
    }
    v
}

/// Two-pass Pearson with the flat-patch rule (variance below 1e-12 gives 0).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va / n < 1e-12 || vb / n < 1e-12 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

pub fn mask(i: usize, j: usize, k: usize, l: usize, b: usize, sigma: f64) -> f64 {
    if sigma.is_infinite() {
        return 1.0;
    }
    let dx = (i * b) as f64 - k as f64;
    let dy = (j * b) as f64 - l as f64;
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Every masked score by direct evaluation, plus the first maximum in
/// `l`-major, `k`-minor scan order.
pub struct BruteField {
    pub main_cols: usize,
    pub main_rows: usize,
    pub side_cols: usize,
    pub side_rows: usize,
    /// `[p][l][k]` with `p = j * main_cols + i`.
    pub scores: Vec<f64>,
    pub best: Vec<(usize, usize)>,
}

impl BruteField {
    pub fn score(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let p = j * self.main_cols + i;
        self.scores[(p * self.side_rows + l) * self.side_cols + k]
    }
}

pub fn brute_field(main: &FeatureMap, side: &FeatureMap, b: usize, sigma: f64) -> BruteField {
    let (h, w) = (main.height(), main.width());
    let (main_cols, main_rows) = (w / b, h / b);
    let (side_cols, side_rows) = (w - b + 1, h - b + 1);
    let side_windows: Vec<Vec<f64>> = (0..side_rows)
        .flat_map(|l| (0..side_cols).map(move |k| (k, l)))
        .map(|(k, l)| window(side, l, k, b))
        .collect();
    let mut scores = Vec::with_capacity(main_cols * main_rows * side_cols * side_rows);
    let mut best = Vec::with_capacity(main_cols * main_rows);
    for j in 0..main_rows {
        for i in 0..main_cols {
            let mp = window(main, j * b, i * b, b);
            let mut top = (0, 0);
            let mut top_score = f64::NEG_INFINITY;
            for l in 0..side_rows {
                for k in 0..side_cols {
                    let s = pearson(&mp, &side_windows[l * side_cols + k]) * mask(i, j, k, l, b, sigma);
                    if s > top_score {
                        top_score = s;
                        top = (k, l);
                    }
                    scores.push(s);
                }
            }
            best.push(top);
        }
    }
    BruteField {
        main_cols,
        main_rows,
        side_cols,
        side_rows,
        scores,
        best,
    }
}

fn upsample(input: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(2 * input.height(), 2 * input.width(), input.channels(), |r, c, ch| {
        input.get(r / 2, c / 2, ch)
    })
    .unwrap()
}

/// Zero-padded convolution straight from the OIHW kernel.
pub fn conv(input: &FeatureMap, stage: &ConvStage) -> FeatureMap {
    let up;
    let (src, stride) = match stage.resample() {
        Resample::Up2 => {
            up = upsample(input);
            (&up, 1)
        }
        Resample::Same => (input, 1),
        Resample::Down2 => (input, 2),
    };
    let k = stage.kernel_size();
    let pad = (k / 2) as isize;
    let (cin, cout) = (stage.in_channels(), stage.out_channels());
    let (oh, ow) = (src.height() / stride, src.width() / stride);
    let kern = stage.kernel();
    let mut out = vec![0f32; oh * ow * cout];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..cout {
                let mut acc = f64::from(stage.bias()[o]);
                for i in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad;
                            let ix = (x * stride + kx) as isize - pad;
                            if iy < 0 || ix < 0 || iy >= src.height() as isize || ix >= src.width() as isize {
                                continue;
                            }
                            let wt = kern[((o * cin + i) * k + ky) * k + kx];
                            acc += f64::from(wt) * f64::from(src.get(iy as usize, ix as usize, i));
                        }
                    }
                }
                if let Some(slope) = stage.activation() {
                    if acc < 0.0 {
                        acc *= f64::from(slope);
                    }
                }
                out[(y * ow + x) * cout + o] = acc as f32;
            }
        }
    }
    FeatureMap::from_vec(oh, ow, cout, out).unwrap()
}

fn add(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    assert_eq!(a.dims(), b.dims());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    FeatureMap::from_vec(a.height(), a.width(), a.channels(), data).unwrap()
}

fn concat(maps: &[&FeatureMap]) -> FeatureMap {
    let c: usize = maps.iter().map(|m| m.channels()).sum();
    let (h, w) = (maps[0].height(), maps[0].width());
    FeatureMap::from_fn(h, w, c, |r, col, ch| {
        let mut ch = ch;
        for m in maps {
            if ch < m.channels() {
                return m.get(r, col, ch);
            }
            ch -= m.channels();
        }
        unreachable!()
    })
    .unwrap()
}

pub fn residual(x: &FeatureMap, block: &ResidualBlock) -> FeatureMap {
    let body = conv(&conv(x, block.conv_a()), block.conv_b());
    match block.skip() {
        Some(p) => add(&body, &conv(x, p)),
        None => add(&body, x),
    }
}

pub fn fuse_level(
    h: usize,
    main: &FeatureMap,
    aligned: &FeatureMap,
    prev: Option<&FeatureMap>,
    weights: &FusionWeights,
) -> FeatureMap {
    let level = weights.level(h);
    match prev {
        None => residual(&residual(&concat(&[main, aligned]), level.res1()), level.res2()),
        Some(p) => {
            let up = upsample(p);
            let z = add(&residual(&concat(&[main, aligned, &up]), level.res1()), &up);
            residual(&z, level.res2())
        }
    }
}

pub fn reconstruct(phi1: &FeatureMap, x_hat_1: &FeatureMap, weights: &FusionWeights) -> FeatureMap {
    add(&conv(phi1, weights.head()), x_hat_1)
}

pub fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .fold(0.0, f64::max)
}

/// Least-squares cubic by normal equations and Gaussian elimination, the
/// BD-rate integral by composite Simpson on a fine grid.
pub fn bd_rate_oracle(reference: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    fn fit(pts: &[(f64, f64)]) -> [f64; 4] {
        let mut a = [[0.0f64; 5]; 4];
        for &(bpp, q) in pts {
            let y = bpp.log10();
            let pw = [1.0, q, q * q, q * q * q];
            for r in 0..4 {
                for c in 0..4 {
                    a[r][c] += pw[r] * pw[c];
                }
                a[r][4] += pw[r] * y;
            }
        }
        for col in 0..4 {
            let piv = (col..4).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..4 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..5 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        [a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]]
    }
    let range = |p: &[(f64, f64)]| {
        let lo = p.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (r0, r1) = range(reference);
    let (t0, t1) = range(test);
    let (lo, hi) = (r0.max(t0), r1.min(t1));
    let cr = fit(reference);
    let ct = fit(test);
    let eval = |c: &[f64; 4], q: f64| c[0] + q * (c[1] + q * (c[2] + q * c[3]));
    let n = 20_000;
    let step = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for s in 0..=n {
        let q = lo + step * s as f64;
        let wt = if s == 0 || s == n { 1.0 } else if s % 2 == 1 { 4.0 } else { 2.0 };
        acc += wt * (eval(&ct, q) - eval(&cr, q));
    }
    let avg = acc * step / 3.0 / (hi - lo);
    (10f64.powf(avg) - 1.0) * 100.0
}
