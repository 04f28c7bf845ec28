//! Hybrid-cloud readiness assessment for file-storage volumes.
//!
//! The pipeline scans volume metadata, content-scans a cluster-proportional
//! sample of files against a sensitive-information dictionary, trains a
//! metadata-only classifier on that sample, predicts the sensitivity of every
//! remaining file, and correlates the result with IO-density hotness to
//! recommend which volumes and user folders can move to a public cloud.

pub mod error;
pub mod matrix;
pub mod scan;
pub mod seed;
pub mod stopwords;
pub mod dictionary;

pub use error::{Error, Result};
pub mod features;
pub mod select;
pub mod cluster;
pub mod hotness;
pub mod learn;
pub mod sample;
pub mod plan;
pub mod synth;
pub mod pipeline;
