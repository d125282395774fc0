use crate::error::{Error, Result};
use crate::tensor::PatchView;

/// Per-element variance below which a patch is treated as flat.
pub const VARIANCE_EPS: f64 = 1e-12;

/// Pearson correlation of two equally shaped patches, flattened across
/// rows, columns and channels into one vector each.
///
/// A flat patch (variance below [`VARIANCE_EPS`]) correlates as 0.
pub fn pearson(a: &PatchView<'_>, b: &PatchView<'_>) -> Result<f64> {
    if a.size() != b.size() || a.channels() != b.channels() {
        return Err(Error::geometry(format!(
            "pearson on mismatched patches {}x{}x{} and {}x{}x{}",
            a.size(),
            a.size(),
            a.channels(),
            b.size(),
            b.size(),
            b.channels()
        )));
    }
    Ok(pearson_iter(a.iter(), b.iter(), a.len()))
}

/// [`pearson`] over raw slices of equal length.
pub fn pearson_values(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::geometry(format!(
            "pearson on slices of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(pearson_iter(a.iter().copied(), b.iter().copied(), a.len()))
}

fn pearson_iter(
    a: impl Iterator<Item = f32> + Clone,
    b: impl Iterator<Item = f32> + Clone,
    n: usize,
) -> f64 {
    let n = n as f64;
    let mean_a = a.clone().map(f64::from).sum::<f64>() / n;
    let mean_b = b.clone().map(f64::from).sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let dx = f64::from(x) - mean_a;
        let dy = f64::from(y) - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a / n < VARIANCE_EPS || var_b / n < VARIANCE_EPS {
        return 0.0;
    }
    (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{extract_patch, FeatureMap, PatchGrid};

    fn view_of(map: &FeatureMap) -> PatchView<'_> {
        let g = PatchGrid::over(map, map.height(), 1).unwrap();
        extract_patch(map, &g, 0, 0).unwrap()
    }

    #[test]
    fn hand_computed_value() {
        let a = FeatureMap::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = FeatureMap::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        // 6.5 / sqrt(5 * 8.75)
        let r = pearson(&view_of(&a), &view_of(&b)).unwrap();
        assert!((r - 0.982_707_629_824).abs() < 1e-12, "{r}");
    }

    #[test]
    fn self_and_anti_correlation() {
        let a = FeatureMap::from_fn(3, 3, 2, |r, c, ch| (r * 7 + c * 3 + ch) as f32 % 5.0).unwrap();
        let neg = a.map(|v| 4.0 - v);
        assert_eq!(pearson(&view_of(&a), &view_of(&a)).unwrap(), 1.0);
        let r = pearson(&view_of(&a), &view_of(&neg)).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_patch_scores_zero() {
        let a = FeatureMap::filled(2, 2, 3, 0.7).unwrap();
        let b = FeatureMap::from_fn(2, 2, 3, |r, c, ch| (r + c + ch) as f32).unwrap();
        assert_eq!(pearson(&view_of(&a), &view_of(&b)).unwrap(), 0.0);
        assert_eq!(pearson(&view_of(&b), &view_of(&a)).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = FeatureMap::zeros(2, 2, 1).unwrap();
        let b = FeatureMap::zeros(2, 2, 2).unwrap();
        assert!(pearson(&view_of(&a), &view_of(&b)).is_err());
        assert!(pearson_values(&[1.0], &[1.0, 2.0]).is_err());
    }
}
