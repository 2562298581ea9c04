//! Command-line harness for `cogflow`: configuration parsing, experiment
//! dispatch, CSV/SVG artifacts and the exit-code contract.
//!
//! Everything the binary does is available here; `main.rs` only parses
//! arguments and reads the environment.

pub mod config;
pub mod harness;
pub mod svg;

pub use config::{load_config, parse_config, ConfigError, Experiment, RunConfig};
pub use harness::{run, RunOutcome, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_FAIL, EXIT_PASS};
