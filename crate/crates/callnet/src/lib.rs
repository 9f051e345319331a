//! File formats, experiment pipelines and the resumable architecture grid
//! built on `callnet-core`.

pub mod config;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod plan;
pub mod report;
pub mod stats_run;

pub use config::Config;
pub use plan::ExperimentPlan;
pub use report::ReportRow;
