use rayon::prelude::*;

use super::mask::GaussianMask;
use super::pearson::VARIANCE_EPS;
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, PatchGrid};

/// Masked Pearson scores of every main patch against every side window,
/// plus the best side window per main patch.
///
/// The main grid is non-overlapping (`stride = B`) and the side grid dense
/// (`stride = 1`). Scores are laid out by side row first, `[l][p][k]` with
/// `p` the linear main-patch index, so each side row forms one contiguous
/// block.
#[derive(Debug, Clone)]
pub struct CorrelationField {
    main_grid: PatchGrid,
    side_grid: PatchGrid,
    sigma: f64,
    scores: Vec<f64>,
    best: Vec<(usize, usize)>,
}

impl CorrelationField {
    pub fn main_grid(&self) -> &PatchGrid {
        &self.main_grid
    }

    pub fn side_grid(&self) -> &PatchGrid {
        &self.side_grid
    }

    pub fn patch_size(&self) -> usize {
        self.main_grid.patch
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn score(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let p = self.main_grid.linear(i, j);
        self.scores[(l * self.main_grid.len() + p) * self.side_grid.cols() + k]
    }

    /// Best side window `(k*, l*)` for main patch `(i, j)`.
    #[inline]
    pub fn best(&self, i: usize, j: usize) -> (usize, usize) {
        self.best[self.main_grid.linear(i, j)]
    }

    /// Best indices for all main patches, `i` fastest.
    pub fn best_indices(&self) -> &[(usize, usize)] {
        &self.best
    }

    /// Replaces the best indices. For tests and tools that drive alignment
    /// from an externally chosen matching.
    pub fn with_best(mut self, best: Vec<(usize, usize)>) -> Result<Self> {
        if best.len() != self.main_grid.len()
            || best.iter().any(|&(k, l)| !self.side_grid.contains(k, l))
        {
            return Err(Error::geometry("best indices do not fit the side grid"));
        }
        self.best = best;
        Ok(self)
    }

    pub fn heap_bytes(&self) -> usize {
        self.scores.capacity() * std::mem::size_of::<f64>()
            + self.best.capacity() * std::mem::size_of::<(usize, usize)>()
    }
}

fn grids(main: &FeatureMap, side: &FeatureMap, patch: usize) -> Result<(PatchGrid, PatchGrid)> {
    if main.dims() != side.dims() {
        return Err(Error::geometry(format!(
            "main {:?} and side {:?} features differ in shape",
            main.dims(),
            side.dims()
        )));
    }
    let main_grid = PatchGrid::over(main, patch, patch)?;
    if !main_grid.is_partition() {
        return Err(Error::geometry(format!(
            "feature map {}x{} is not divisible by patch size {patch}",
            main.height(),
            main.width()
        )));
    }
    let side_grid = PatchGrid::over(side, patch, 1)?;
    Ok((main_grid, side_grid))
}

/// Builds the Gaussian mask for a main/side pair without computing scores.
pub fn build_mask(main: &FeatureMap, side: &FeatureMap, patch: usize, sigma: f64) -> Result<GaussianMask> {
    let (main_grid, side_grid) = grids(main, side, patch)?;
    GaussianMask::new(&main_grid, &side_grid, sigma)
}

/// Masked correlation of every `B x B` main patch with every side window.
///
/// Inner products come from sliding each centred main patch over the side
/// map as a convolution kernel (batched as one GEMM per side row); window
/// means and energies come from integral images of the side map. Argmax
/// ties go to the smallest `l`, then the smallest `k`.
pub fn correlation_field(
    main: &FeatureMap,
    side: &FeatureMap,
    patch: usize,
    sigma: f64,
) -> Result<CorrelationField> {
    let mask = build_mask(main, side, patch, sigma)?;
    correlation_field_with_mask(main, side, patch, &mask)
}

/// [`correlation_field`] at the geometry of pyramid level `h`: same
/// contract, called with that level's maps and patch size.
pub fn correlation_field_per_level(
    main_h: &FeatureMap,
    side_h: &FeatureMap,
    patch_h: usize,
    sigma: f64,
) -> Result<CorrelationField> {
    correlation_field(main_h, side_h, patch_h, sigma)
}

pub fn correlation_field_with_mask(
    main: &FeatureMap,
    side: &FeatureMap,
    patch: usize,
    mask: &GaussianMask,
) -> Result<CorrelationField> {
    let (main_grid, side_grid) = grids(main, side, patch)?;
    let n = patch * patch * main.channels();
    let nf = n as f64;
    let row_len = patch * main.channels();

    // Centred main patches, one row of `n` values each.
    let np = main_grid.len();
    let mut centred = vec![0f64; np * n];
    let mut main_energy = vec![0f64; np];
    for (p, (i, j)) in main_grid.indices().enumerate() {
        let (r0, c0) = main_grid.origin(i, j);
        let dst = &mut centred[p * n..(p + 1) * n];
        for dy in 0..patch {
            let start = main.index(r0 + dy, c0, 0);
            for (d, &v) in dst[dy * row_len..(dy + 1) * row_len]
                .iter_mut()
                .zip(&main.data()[start..start + row_len])
            {
                *d = f64::from(v);
            }
        }
        let mean = dst.iter().sum::<f64>() / nf;
        dst.iter_mut().for_each(|v| *v -= mean);
        main_energy[p] = dst.iter().map(|v| v * v).sum();
    }

    let (sum_table, sq_table) = integral_tables(side);
    let table_w = side.width() + 1;
    let window = |table: &[f64], k: usize, l: usize| {
        table[(l + patch) * table_w + k + patch] - table[l * table_w + k + patch]
            - table[(l + patch) * table_w + k]
            + table[l * table_w + k]
    };

    let kw = side_grid.cols();
    let mut scores = vec![0f64; side_grid.rows() * np * kw];
    scores
        .par_chunks_mut(np * kw)
        .enumerate()
        .for_each(|(l, block)| {
            // Side windows of this row, each flattened in (row, col, channel) order.
            let mut windows = vec![0f64; kw * n];
            for k in 0..kw {
                let dst = &mut windows[k * n..(k + 1) * n];
                for dy in 0..patch {
                    let start = side.index(l + dy, k, 0);
                    for (d, &v) in dst[dy * row_len..(dy + 1) * row_len]
                        .iter_mut()
                        .zip(&side.data()[start..start + row_len])
                    {
                        *d = f64::from(v);
                    }
                }
            }
            // SAFETY: `centred` is np x n row-major, `windows` is kw x n
            // row-major read as its n x kw transpose, `block` is np x kw.
            unsafe {
                matrixmultiply::dgemm(
                    np,
                    n,
                    kw,
                    1.0,
                    centred.as_ptr(),
                    n as isize,
                    1,
                    windows.as_ptr(),
                    1,
                    n as isize,
                    0.0,
                    block.as_mut_ptr(),
                    kw as isize,
                    1,
                );
            }
            let side_energy: Vec<f64> = (0..kw)
                .map(|k| {
                    let s = window(&sum_table, k, l);
                    window(&sq_table, k, l) - s * s / nf
                })
                .collect();
            for (p, (i, j)) in main_grid.indices().enumerate() {
                let row = &mut block[p * kw..(p + 1) * kw];
                if main_energy[p] / nf < VARIANCE_EPS {
                    row.fill(0.0);
                    continue;
                }
                let row_factor = mask.row_factor(j, l);
                for ((v, &e), &cf) in row.iter_mut().zip(&side_energy).zip(mask.col_factors(i)) {
                    *v = if e / nf < VARIANCE_EPS {
                        0.0
                    } else {
                        (*v / (main_energy[p] * e).sqrt()).clamp(-1.0, 1.0) * (cf * row_factor)
                    };
                }
            }
        });

    let side_rows = side_grid.rows();
    let best = (0..np)
        .into_par_iter()
        .map(|p| {
            let mut best = (0, 0);
            let mut best_score = f64::NEG_INFINITY;
            for l in 0..side_rows {
                let row = &scores[(l * np + p) * kw..(l * np + p + 1) * kw];
                for (k, &s) in row.iter().enumerate() {
                    if s > best_score {
                        best_score = s;
                        best = (k, l);
                    }
                }
            }
            best
        })
        .collect();

    Ok(CorrelationField {
        main_grid,
        side_grid,
        sigma: mask.sigma(),
        scores,
        best,
    })
}

/// Summed-area tables of the per-pixel channel sum and channel sum of
/// squares, `(H + 1) x (W + 1)` with a zero first row and column.
fn integral_tables(map: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (map.height(), map.width());
    let tw = w + 1;
    let mut sums = vec![0f64; (h + 1) * tw];
    let mut squares = vec![0f64; (h + 1) * tw];
    for r in 0..h {
        let (mut run_s, mut run_q) = (0f64, 0f64);
        for c in 0..w {
            for &v in map.pixel(r, c) {
                let v = f64::from(v);
                run_s += v;
                run_q += v * v;
            }
            sums[(r + 1) * tw + c + 1] = sums[r * tw + c + 1] + run_s;
            squares[(r + 1) * tw + c + 1] = squares[r * tw + c + 1] + run_q;
        }
    }
    (sums, squares)
}
