use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::perturb::{perturb, PerturbKind, PerturbSpec};
use super::pipeline::{Pipeline, REPORT_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::metrics::performance_reduction;
use crate::tensor::FeatureMap;

/// Quality gain of the second stage over the first for one factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub factor: f64,
    pub psnr_db: Option<f64>,
    pub ms_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub factor: f64,
    pub improvement_psnr_db: Option<f64>,
    pub improvement_ms_ssim: Option<f64>,
    /// `None` when the baseline improvement is zero or undefined.
    pub pr_psnr: Option<f64>,
    pub pr_ms_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub kind: PerturbKind,
    pub rows: Vec<SweepRow>,
}

fn pr(before: Option<f64>, after: Option<f64>) -> Result<Option<f64>> {
    match (before, after) {
        (Some(b), Some(a)) => match performance_reduction(b, a) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedPr) => Ok(None),
            Err(e) => Err(e),
        },
        _ => Ok(None),
    }
}

/// PR of every row against the row with factor 1.
pub fn pr_table(kind: PerturbKind, improvements: &[Improvement]) -> Result<SweepReport> {
    let base = improvements
        .iter()
        .find(|r| r.factor == 1.0)
        .ok_or_else(|| Error::InvalidConfig("sweep factors must include the baseline 1.0".into()))?;
    let rows = improvements
        .iter()
        .map(|r| {
            Ok(SweepRow {
                factor: r.factor,
                improvement_psnr_db: r.psnr_db,
                improvement_ms_ssim: r.ms_ssim,
                pr_psnr: pr(base.psnr_db, r.psnr_db)?,
                pr_ms_ssim: pr(base.ms_ssim, r.ms_ssim)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind,
        rows,
    })
}

/// Runs the pipeline once per factor with the side image perturbed and
/// tabulates the loss of improvement relative to the unperturbed run.
pub fn robustness_sweep(
    main: &FeatureMap,
    side: &FeatureMap,
    config: &PipelineConfig,
    kind: PerturbKind,
    factors: &[f64],
) -> Result<SweepReport> {
    if !factors.contains(&1.0) {
        return Err(Error::InvalidConfig("sweep factors must include the baseline 1.0".into()));
    }
    let pipeline = Pipeline::new(config.clone())?;
    let mut improvements = Vec::with_capacity(factors.len());
    for &factor in factors {
        let perturbed = perturb(side, PerturbSpec::new(kind, factor)?)?;
        let report = pipeline.run(main, &perturbed)?.report;
        improvements.push(Improvement {
            factor,
            psnr_db: report.psnr_db.improvement(),
            ms_ssim: report.ms_ssim.improvement(),
        });
    }
    pr_table(kind, &improvements)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imp(factor: f64, v: f64) -> Improvement {
        Improvement {
            factor,
            psnr_db: Some(v),
            ms_ssim: Some(v),
        }
    }

    #[test]
    fn worked_example_row() {
        let t = pr_table(PerturbKind::Brightness, &[imp(1.0, 0.02), imp(0.8, 0.015)]).unwrap();
        assert_eq!(t.rows[0].pr_psnr, Some(0.0));
        assert_eq!(t.rows[1].pr_ms_ssim, Some(0.25));
    }

    #[test]
    fn zero_baseline_is_undefined() {
        let t = pr_table(PerturbKind::Scale, &[imp(1.0, 0.0), imp(1.2, 0.1)]).unwrap();
        assert!(t.rows.iter().all(|r| r.pr_psnr.is_none()));
        let json = serde_json::to_value(&t).unwrap();
        assert!(json["rows"][1]["pr_psnr"].is_null());
    }

    #[test]
    fn baseline_required() {
        assert!(matches!(
            pr_table(PerturbKind::Scale, &[imp(0.9, 0.1)]),
            Err(Error::InvalidConfig(_))
        ));
    }
}
