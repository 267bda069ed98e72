//! The debugging pipeline as library calls, one module per step, plus the
//! review server. The `rccdbg` binary is a thin command-line wrapper.

pub mod analysis;
pub mod assign;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod heatmaps;
pub mod report;
pub mod retrain;
pub mod server;
pub mod workspace;

pub use config::PipelineConfig;
pub use workspace::Workspace;
