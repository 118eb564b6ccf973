//! Files, pipeline and command line around `fairtab-core`.

pub mod backend;
pub mod config;
pub mod error;
pub mod intrinsic;
pub mod io;
pub mod pipeline;
pub mod prepare;
pub mod report;

pub use config::{ClassifierPath, ExperimentConfig, GridConfig, IntrinsicConfig, Stage};
pub use error::{Error, Result};
pub use intrinsic::{run_grid, run_intrinsic_eval};
pub use pipeline::{run_experiment, run_stage, StageReport};
pub use report::emit_report_table;
