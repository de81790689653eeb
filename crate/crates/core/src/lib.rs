//! Discriminant structured dictionaries for blood-oxygen-saturation signals.
//!
//! The crate covers the whole screening chain:
//!
//! - [`signal`]: repair, baseline removal and segmentation of 1 Hz oximetry records
//! - [`sparse`]: dictionaries and orthogonal matching pursuit
//! - [`ksvd`]: unsupervised dictionary learning
//! - [`discriminant`]: per-atom class-conditional statistics and discriminability measures
//! - [`selection`]: DAS-KSVD and the MDCS/MDAS baselines
//! - [`classifier`]: a tansig MLP trained by conjugate gradient
//! - [`screening`]: AHI estimation, severity bands, confusion matrices and ROC analysis
//! - [`synth`]: synthetic cohorts with planted apnea/hypopnea events
//! - [`pipeline`]: end-to-end composition driven by a [`config::PipelineConfig`]

pub mod classifier;
pub mod config;
pub mod discriminant;
pub mod error;
pub mod io;
pub mod ksvd;
mod linalg;
pub mod pipeline;
pub mod screening;
pub mod selection;
pub mod signal;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{EventClass, Record, Segment, SegmentMatrix};
pub use sparse::{Dictionary, SparseCodes};
