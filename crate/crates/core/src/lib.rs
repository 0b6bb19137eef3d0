//! Tactile gesture recognition on a simulated modular robot skin.
//!
//! The pipeline runs skin geometry → gesture synthesis → threshold
//! segmentation → per-frame tactile graphs → an SE(3)-invariant EGCL
//! classifier, with flattened-vector baselines and a gesture→command
//! state machine for the streaming demo.

pub mod ablation;
pub mod actions;
pub mod baselines;
pub mod bench;
pub mod dataset;
pub mod egnn;
pub mod error;
pub mod graph;
pub mod nn;
pub mod segment;
pub mod skin;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
