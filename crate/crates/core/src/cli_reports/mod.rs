//! Configuration, suite execution and report emission behind the command line.

pub mod config;
pub mod report;
pub mod richardson;
pub mod suites;

pub use config::{Command, ExperimentConfig, Tolerances};
pub use report::{CheckRecord, Comparison, Environment, Report, Status, Timing};
pub use richardson::{richardson, Richardson};
pub use suites::run;
