use super::field::CorrelationField;
use super::{level_patch_size, reuse_index};
use crate::error::{Error, Result};
use crate::tensor::{extract_patch, write_patch, FeatureMap, FeaturePyramid, PatchGrid, PYRAMID_LEVELS};

/// Copies, for every main patch `(i, j)`, the lossless side patch at
/// `index(i, j)` into position `(i, j)` of a non-overlapping grid.
fn assemble(
    lossless: &FeatureMap,
    patch: usize,
    main_cols: usize,
    main_rows: usize,
    index: impl Fn(usize, usize) -> (usize, usize),
) -> Result<FeatureMap> {
    let main_grid = PatchGrid::over(lossless, patch, patch)?;
    let side_grid = PatchGrid::over(lossless, patch, 1)?;
    if !main_grid.is_partition() || main_grid.cols() != main_cols || main_grid.rows() != main_rows {
        return Err(Error::geometry(format!(
            "lossless map {}x{} does not tile into the {main_cols}x{main_rows} main grid at B={patch}",
            lossless.height(),
            lossless.width()
        )));
    }
    let mut out = FeatureMap::zeros(lossless.height(), lossless.width(), lossless.channels())?;
    for (i, j) in main_grid.indices() {
        let (k, l) = index(i, j);
        let values = extract_patch(lossless, &side_grid, k, l)?.to_vec();
        write_patch(&mut out, &main_grid, i, j, &values)?;
    }
    Ok(out)
}

/// Level-1 aligned side features: each main position receives the
/// lossless side patch at its best index.
pub fn align_level1(field: &CorrelationField, lossless_side: &FeatureMap) -> Result<FeatureMap> {
    let side = field.side_grid();
    if lossless_side.height() != side.height || lossless_side.width() != side.width {
        return Err(Error::geometry(format!(
            "lossless map {}x{} differs from matched side map {}x{}",
            lossless_side.height(),
            lossless_side.width(),
            side.height,
            side.width
        )));
    }
    let main = field.main_grid();
    assemble(lossless_side, field.patch_size(), main.cols(), main.rows(), |i, j| {
        field.best(i, j)
    })
}

/// Aligns all four lossless levels from the single level-1 field.
///
/// Level `h` uses patch size `B / 2^(h-1)` and, for main patch `(i, j)`,
/// the level-`h` side patch at `(floor(k* / 2^(h-1)), floor(l* / 2^(h-1)))`.
/// When the level-1 winner is a multiple of `2^(h-1)` that is exactly the
/// patch whose lifted index equals it.
pub fn align_all_levels(
    field: &CorrelationField,
    lossless: &FeaturePyramid,
    patch: usize,
) -> Result<FeaturePyramid> {
    if field.patch_size() != patch {
        return Err(Error::InvalidConfig(format!(
            "field was built with B={}, alignment asked for B={patch}",
            field.patch_size()
        )));
    }
    level_patch_size(patch, PYRAMID_LEVELS)?;
    let main = field.main_grid();
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    levels.push(align_level1(field, lossless.level(1))?);
    for h in 2..=PYRAMID_LEVELS {
        let patch_h = level_patch_size(patch, h)?;
        let mapped: Vec<(usize, usize)> = field
            .best_indices()
            .iter()
            .map(|&(k, l)| reuse_index(patch, h, k, l))
            .collect::<Result<_>>()?;
        let cols = main.cols();
        levels.push(assemble(lossless.level(h), patch_h, cols, main.rows(), |i, j| {
            mapped[j * cols + i]
        })?);
    }
    let levels: [FeatureMap; PYRAMID_LEVELS] = levels.try_into().expect("four levels");
    FeaturePyramid::new(levels)
}

/// Alignment driven by one independently matched field per level.
pub fn align_per_level(
    fields: &[CorrelationField; PYRAMID_LEVELS],
    lossless: &FeaturePyramid,
) -> Result<FeaturePyramid> {
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    for (idx, field) in fields.iter().enumerate() {
        levels.push(align_level1(field, lossless.level(idx + 1))?);
    }
    let levels: [FeatureMap; PYRAMID_LEVELS] = levels.try_into().expect("four levels");
    FeaturePyramid::new(levels)
}
