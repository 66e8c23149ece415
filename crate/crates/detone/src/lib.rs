//! Operator-facing half of the inverse-halftoning toolkit: image file
//! I/O, corpus ingestion and patch sampling, the two-stage training
//! schedule, evaluation reports, and configuration profiles. The
//! algorithms themselves live in `detone-core`.

pub mod config;
pub mod dataset;
pub mod imageio;
pub mod report;
pub mod trainer;

pub use detone_core as core;
