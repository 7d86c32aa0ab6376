//! NMF-based decomposition of mobile eye-tracking recordings.
//!
//! The pipeline turns raw recordings (frame sequences plus gaze logs) into
//! `k` spatiotemporal components: gaze samples are aggregated into fixations,
//! a gaze-centered patch is cropped from each fixation's anchor frame, the
//! vectorized patches of all recordings form one universal matrix, and that
//! matrix is factorized under nonnegativity constraints. The resulting
//! components are ranked by impact and rendered into a visual report.

pub mod components;
pub mod fixation;
pub mod ingest;
pub mod nmf;
pub mod patchgrid;
pub mod report;
pub mod synth;

pub use ingest::{GazeSample, Image, Recording};
pub use nmf::{Algorithm, Factorization, FactorizationOptions};
pub use patchgrid::{ColumnMeta, PatchMatrix, StencilSpec};
