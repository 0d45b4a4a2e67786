//! Config-driven front end for `subvar-core`: experiment files, coefficient
//! expressions and tables, CSV/JSON artifacts and run manifests.

pub mod build;
pub mod config;
pub mod expr;
pub mod run;
pub mod table;

pub use config::{parse_config, parse_str, ConfigErrors, ExperimentConfig, Kind};
pub use run::{run_file, summarize, RunError, RunManifest};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "SUBVAR_THREADS";
