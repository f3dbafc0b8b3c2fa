//! Dual-branch end-to-end driving planner at desk scale.
//!
//! The crate contains a small reverse-mode tensor engine ([`tensor`]), BEV
//! geometry ([`geometry`]), the path/deformable/multi-head attention
//! operators ([`attention`]), the training objectives ([`losses`]), the
//! dual-branch network ([`model`]), a synthetic driving world ([`world`]),
//! open-loop metrics ([`metrics`]) and the experiment harness ([`harness`])
//! behind the `dbp` binary.

pub mod attention;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod types;
pub mod world;

pub use error::{Error, Result};
