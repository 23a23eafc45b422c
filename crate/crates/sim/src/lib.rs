//! Command-line companion of `skt-core`: TOML scenarios, presets, CSV
//! diagnostics, field snapshots, parameter sweeps and the acceptance suite.

pub mod cli;
pub mod config;
pub mod io;
pub mod presets;
pub mod runner;
pub mod selftest;
pub mod sweep;

pub use config::{load_config, ConfigError, Scenario, ScenarioConfig};
pub use io::{read_diagnostics, read_field, write_diagnostics, write_field, DiagnosticsRow};
