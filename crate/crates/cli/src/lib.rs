//! Configuration, orchestration and bit-stable output for the `rmt` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{
    cmd_bogovskii, cmd_decay_fit, cmd_eigen, cmd_simulate, run_bogovskii, run_eigen, run_simulation, EigenMode, EigenOutput,
    SimulationOutcome, SimulationSummary,
};
pub use config::{DtSpec, GeometryConfig, RunConfig, TimeConfig};
pub use error::CliError;
