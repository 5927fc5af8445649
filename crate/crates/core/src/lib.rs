//! Region-of-interest triage for X-ray ptychography scans.
//!
//! Frames are scored by total transmitted intensity (absorption) and by the
//! magnitude of their standardized center of mass (scattering). Each score
//! map is split in two by k-means, the informative clusters are merged into a
//! region-of-interest mask, and the dataset is filtered to that mask before
//! reconstruction. A phantom simulator and a known-probe ePIE reconstructor
//! are included to check the selection end to end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod pipeline;
pub mod recon;
pub mod render;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
