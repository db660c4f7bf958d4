//! Scenario files, batch execution, CSV export and SVG plots for the
//! `dabsim` command-line tool.

pub mod batch;
pub mod config;
pub mod plot;
pub mod validate;

pub use batch::{run_compare, run_scenario, run_sweep, simulate_scenario, RunError};
pub use config::{parse_config, ConfigError, Scenario};
pub use plot::PlotStyle;
