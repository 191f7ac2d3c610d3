//! Writer retrieval and writer classification for historical document images.
//!
//! The pipeline binarizes each page, samples SIFT keypoints (optionally only
//! dark scale-space minima lying on ink), normalizes the local descriptors,
//! aggregates them per document with VLAD and generalized max pooling over
//! several codebooks, whitens the concatenation jointly, and evaluates the
//! resulting global descriptors by leave-one-out retrieval and by
//! nearest-neighbor or per-writer SVM classification.

pub mod binarize;
pub mod classify;
pub mod config;
pub mod corpus;
pub mod encode;
pub mod error;
pub mod features;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
