//! Multi-scale feature-domain patch matching for stereo image compression.
//!
//! A main image is decoded with a learned codec; a losslessly available side
//! image is mapped into the same feature space, its patches are matched to
//! the main patches with a masked Pearson correlation, and the aligned side
//! features are fused coarse to fine into a refined reconstruction.

pub mod bundle;
pub mod conv;
pub mod error;
pub mod extractor;
pub mod fusion;
pub mod harness;
pub mod matcher;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use bundle::ModelWeights;
pub use error::{Error, Result};
pub use extractor::{CodecWeights, Latent};
pub use fusion::FusionWeights;
pub use harness::{Pipeline, PipelineConfig, PipelineReport};
pub use matcher::{CorrelationField, GaussianMask};
pub use metrics::{RdCurve, RdPoint};
pub use tensor::{FeatureMap, FeaturePyramid, PatchGrid, PatchView};
