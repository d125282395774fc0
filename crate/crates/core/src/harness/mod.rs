//! Image I/O, perturbations and the end-to-end drivers: a single pipeline
//! run, the robustness sweep and the reuse benchmark.

mod bench;
mod config;
mod image_io;
mod perturb;
mod pipeline;
mod sweep;

pub use bench::{bench_reuse, BenchReport, PathStats, MIN_REPETITIONS};
pub use config::{PipelineConfig, WeightsSource, PATCH_SIZES};
pub use image_io::{center_crop_to, from_rgb8, load_image, save_image, to_rgb8, CropInfo};
pub use perturb::{perturb, PerturbKind, PerturbSpec};
pub use pipeline::{
    run_pipeline, MatchingSummary, Pipeline, PipelineOutput, PipelineReport, ReportConfig,
    StagePair, Timings, REPORT_SCHEMA_VERSION,
};
pub use sweep::{pr_table, robustness_sweep, Improvement, SweepReport, SweepRow};
