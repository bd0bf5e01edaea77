//! Two-stage point-set network for superficial white matter (SWM)
//! tractography parcellation.
//!
//! Stage one separates SWM from deep white matter streamlines; stage two
//! assigns each SWM streamline to an atlas cluster or to that cluster's
//! outlier class. The crate covers streamline geometry, the network and its
//! exact gradients, training, inference, evaluation metrics, a synthetic
//! atlas generator, and the binary file formats used by the `swm` tool.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod synthdata;
pub mod training;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use geometry::{mdf_distance, reflect_bilateral, resample, streamline_length, Point3, ResampledStreamline, Streamline};
pub use network::{Architecture, Model, Stage};
pub use pipeline::{parcellate, point_importance, FinalLabel, InferenceOptions, ParcellationResult};
pub use training::{train_stage_one, train_stage_two, TrainingConfig};
