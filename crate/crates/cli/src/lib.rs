//! Configuration, experiment drivers and artifact emission for the `fluctuant` binary.

pub mod config;
pub mod experiments;
pub mod oracle;
pub mod presets;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Format};
pub use experiments::{execute, Experiment};
pub use report::{write_artifacts, Report};
