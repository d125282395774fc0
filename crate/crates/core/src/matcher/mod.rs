//! Feature-domain patch matching.
//!
//! Correlation is computed once, between the level-1 decoded main and
//! decoded side features. Deeper levels reuse it: a level-`h` side patch
//! `(k, l)` covers the same image region as the level-1 side patch
//! `(2^(h-1) k, 2^(h-1) l)`, and main-patch indices are the same on every
//! level because the main patch size halves along with the map.

mod align;
mod field;
mod mask;
mod pearson;

pub use align::{align_all_levels, align_level1, align_per_level};
pub use field::{
    build_mask, correlation_field, correlation_field_per_level, correlation_field_with_mask,
    CorrelationField,
};
pub use mask::GaussianMask;
pub use pearson::{pearson, pearson_values, VARIANCE_EPS};

use crate::error::{Error, Result};
use crate::tensor::{FeaturePyramid, PYRAMID_LEVELS};

/// Default mask width for patch size `B`, in level-1 index units.
pub fn default_sigma(patch: usize) -> f64 {
    2.0 * patch as f64
}

fn check_level(h: usize) -> Result<()> {
    if !(1..=PYRAMID_LEVELS).contains(&h) {
        return Err(Error::InvalidConfig(format!(
            "pyramid level must be in 1..=4, got {h}"
        )));
    }
    Ok(())
}

/// Patch size at level `h`, `B / 2^(h-1)`. Errors when that is not a
/// positive integer.
pub fn level_patch_size(patch: usize, h: usize) -> Result<usize> {
    check_level(h)?;
    let factor = 1usize << (h - 1);
    if patch < factor || !patch.is_multiple_of(factor) {
        return Err(Error::InvalidConfig(format!(
            "patch size {patch} cannot be halved down to level {h}"
        )));
    }
    Ok(patch / factor)
}

/// Level-1 index of the level-`h` side patch `(k, l)`.
pub fn lift_index(patch: usize, h: usize, k: usize, l: usize) -> Result<(usize, usize)> {
    level_patch_size(patch, h)?;
    Ok((k << (h - 1), l << (h - 1)))
}

/// Level-`h` side patch for level-1 index `(k1, l1)`, rounding down when
/// `(k1, l1)` is not a multiple of `2^(h-1)`. Inverse of [`lift_index`].
pub fn reuse_index(patch: usize, h: usize, k1: usize, l1: usize) -> Result<(usize, usize)> {
    level_patch_size(patch, h)?;
    Ok((k1 >> (h - 1), l1 >> (h - 1)))
}

/// One independently matched field per level, the baseline that reuse
/// replaces. `sigma` is given in level-1 units and scaled by `2^-(h-1)` so
/// the prior covers the same image-space neighbourhood on every level.
pub fn per_level_fields(
    main: &FeaturePyramid,
    side: &FeaturePyramid,
    patch: usize,
    sigma: f64,
) -> Result<[CorrelationField; PYRAMID_LEVELS]> {
    let mut fields = Vec::with_capacity(PYRAMID_LEVELS);
    for h in 1..=PYRAMID_LEVELS {
        let patch_h = level_patch_size(patch, h)?;
        let sigma_h = sigma / (1u64 << (h - 1)) as f64;
        fields.push(correlation_field_per_level(
            main.level(h),
            side.level(h),
            patch_h,
            sigma_h,
        )?);
    }
    Ok(fields.try_into().expect("four levels"))
}

/// Fraction of main patches at level `h` whose reused index differs from
/// the index matched directly at that level.
pub fn reuse_disagreement(
    level1: &CorrelationField,
    level_h: &CorrelationField,
    h: usize,
) -> Result<f64> {
    if level1.main_grid().len() != level_h.main_grid().len() {
        return Err(Error::geometry("fields have different main grids"));
    }
    let patch = level1.patch_size();
    let mut differ = 0usize;
    for (&(k, l), &direct) in level1.best_indices().iter().zip(level_h.best_indices()) {
        if reuse_index(patch, h, k, l)? != direct {
            differ += 1;
        }
    }
    Ok(differ as f64 / level1.main_grid().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_examples() {
        assert_eq!(lift_index(16, 2, 3, 5).unwrap(), (6, 10));
        assert_eq!(lift_index(16, 4, 1, 2).unwrap(), (8, 16));
        assert_eq!(reuse_index(16, 2, 6, 10).unwrap(), (3, 5));
    }

    #[test]
    fn lift_reuse_inverse_at_level_two() {
        for k in 0..40 {
            for l in 0..40 {
                let (k1, l1) = lift_index(8, 2, k, l).unwrap();
                assert_eq!(reuse_index(8, 2, k1, l1).unwrap(), (k, l));
            }
        }
    }

    #[test]
    fn level_patch_sizes() {
        assert_eq!(level_patch_size(16, 1).unwrap(), 16);
        assert_eq!(level_patch_size(16, 4).unwrap(), 2);
        assert_eq!(level_patch_size(8, 4).unwrap(), 1);
        assert!(matches!(level_patch_size(4, 4), Err(Error::InvalidConfig(_))));
        assert!(level_patch_size(12, 4).is_err());
        assert!(level_patch_size(16, 0).is_err());
        assert!(level_patch_size(16, 5).is_err());
        assert!(reuse_index(4, 4, 0, 0).is_err());
    }
}
