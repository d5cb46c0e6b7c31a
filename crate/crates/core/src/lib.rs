//! Non-neural machinery of a dense, anchor-based face detector.
//!
//! The crate covers everything around the network: anchor lattices and
//! two-step IoU assignment, focal / IoU / two-step losses with analytic
//! gradients, data-anchor-sampling plans, multi-scale fusion (NMS and box
//! voting), and a WIDER-style average-precision evaluator. A deterministic
//! [`synthetic`] scorer stands in for the network so the whole chain can be
//! exercised end to end.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.

pub mod anchors;
pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod postprocess;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use postprocess::Detection;
