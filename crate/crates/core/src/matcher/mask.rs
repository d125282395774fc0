use crate::error::{Error, Result};
use crate::tensor::PatchGrid;

/// Gaussian spatial prior `m = exp(-d^2 / (2 sigma^2))`, where `d` is the
/// distance between the origins of a main patch and a side patch.
///
/// The squared distance splits into a column and a row term, so the mask
/// is stored as two small factor tables instead of one value per pair.
/// `sigma = inf` gives a mask of ones.
#[derive(Debug, Clone)]
pub struct GaussianMask {
    sigma: f64,
    side_cols: usize,
    side_rows: usize,
    col_factors: Vec<f64>,
    row_factors: Vec<f64>,
}

impl GaussianMask {
    pub fn new(main: &PatchGrid, side: &PatchGrid, sigma: f64) -> Result<Self> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mask sigma must be positive, got {sigma}"
            )));
        }
        let denom = 2.0 * sigma * sigma;
        let factor = |a: usize, b: usize| {
            let d = a as f64 - b as f64;
            (-(d * d) / denom).exp()
        };
        let mut col_factors = Vec::with_capacity(main.cols() * side.cols());
        for i in 0..main.cols() {
            let x = main.origin(i, 0).1;
            col_factors.extend((0..side.cols()).map(|k| factor(x, side.origin(k, 0).1)));
        }
        let mut row_factors = Vec::with_capacity(main.rows() * side.rows());
        for j in 0..main.rows() {
            let y = main.origin(0, j).0;
            row_factors.extend((0..side.rows()).map(|l| factor(y, side.origin(0, l).0)));
        }
        Ok(Self {
            sigma,
            side_cols: side.cols(),
            side_rows: side.rows(),
            col_factors,
            row_factors,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.col_factors[i * self.side_cols + k] * self.row_factors[j * self.side_rows + l]
    }

    /// Column factors of main column `i`, indexed by side column `k`.
    #[inline]
    pub(crate) fn col_factors(&self, i: usize) -> &[f64] {
        &self.col_factors[i * self.side_cols..(i + 1) * self.side_cols]
    }

    #[inline]
    pub(crate) fn row_factor(&self, j: usize, l: usize) -> f64 {
        self.row_factors[j * self.side_rows + l]
    }

    pub fn heap_bytes(&self) -> usize {
        (self.col_factors.capacity() + self.row_factors.capacity()) * std::mem::size_of::<f64>()
    }
}
