//! Conditional denoising diffusion for shear-wall layout generation on
//! building floor-plan rasters.

// NaN-rejecting range checks and index-based kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod drawing;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod schedule;
pub mod suite;
pub mod tensor;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::{DatasetSource, RunConfig};
pub use diffusion::{Denoiser, DiffusionConfig, Example, Parameterization};
pub use drawing::{Canvas, Class, SemanticDrawing};
pub use error::{Error, Result};
pub use metrics::{FeatureCloud, IoUReport};
pub use net::{DenoiserModel, UNetConfig};
pub use schedule::{NoiseSchedule, ScheduleSpec};
pub use tensor::{seeded_gaussian, AdamConfig, AdamState, Graph, NodeId, ParamStore, Tensor};
pub use verify::VerificationReport;
