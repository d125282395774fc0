use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::extractor::Latent;

/// Shannon entropy in bits per symbol of the empirical histogram. Bins are
/// visited in symbol order so the sum is reproducible.
pub fn symbol_entropy(symbols: impl IntoIterator<Item = i64>) -> (f64, usize) {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut n = 0usize;
    for s in symbols {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0);
    }
    let total = n as f64;
    let bits = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * (total / c as f64).log2()
        })
        .sum();
    (bits, n)
}

/// Ideal-coder rate of the quantised latent: empirical entropy times the
/// number of latent symbols, divided by the image area `height * width`.
pub fn bpp_estimate(latent: &Latent, height: usize, width: usize) -> Result<f64> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("image area must be positive".into()));
    }
    let (bits, n) = symbol_entropy(latent.symbols());
    Ok(bits * n as f64 / (height * width) as f64)
}
