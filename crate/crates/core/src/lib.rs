//! Semantically labelled 3D Gaussian splatting for articulated bodies.
//!
//! The crate covers the full pipeline: a CPU splatting renderer that blends
//! color and per-part semantic distributions, the semantic-consistency,
//! topology and image losses, random-walk graph embeddings with contrastive
//! supervision against a body-part prior, high-frequency densification, a
//! synthetic articulated-body data generator, and evaluation metrics.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body;
pub mod disentangle;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod optim;
pub mod parts;
pub mod render;
pub mod semantic;
pub mod synth;

pub use error::{Error, Result};
pub use gaussian::{GaussianCloud, GaussianPoint};
pub use parts::{Part, NUM_PARTS};
