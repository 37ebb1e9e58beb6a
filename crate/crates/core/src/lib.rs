//! Scene graphs over 3D voxel label maps for intracranial hemorrhage.
//!
//! The pipeline: label maps (`volume`, `nifti`) are instanced into objects
//! (`instancing`, `geometry`), relations between bleedings and anatomies
//! are predicted by recurrent relation models (`relnet`), and predictions
//! are scored with detection and triplet recall metrics (`metrics`).
//! `phantom` generates seeded synthetic cases with planted relations.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod graph_io;
pub mod instancing;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod relnet;
pub mod scene;
pub mod volume;

pub use error::{Error, Result};
