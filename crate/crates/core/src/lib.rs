//! Root cause clustering for DNN errors.
//!
//! The crate bundles a small dense/convolutional network engine ([`netcore`]),
//! epsilon-rule layer-wise relevance propagation ([`lrp`]), heatmap clustering
//! with knee-based model selection ([`cluster`]), improvement-set selection and
//! balancing ([`unsafe_set`]) and a parametric image generator ([`synthgen`]).
//!
//! Everything is deterministic: identical inputs and seeds give bit-identical
//! outputs regardless of how many threads rayon uses.

pub mod cluster;
pub mod imageio;
pub mod lrp;
pub mod netcore;
pub mod seed;
pub mod synthgen;
pub mod unsafe_set;

pub use netcore::{NetworkModel, Target, Task, Tensor};
