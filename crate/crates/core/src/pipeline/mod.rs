//! Configuration, record files, the synthetic corpus and batch stages
//! behind the command-line tool.

pub mod config;
pub mod corpus;
pub mod io;
pub mod run;

pub use config::{ConfigError, PipelineConfig, Runtime};
pub use corpus::gen_corpus;
pub use run::{run_all, PipelineError, RunOutput, EXIT_OK, EXIT_TRANSPORT, EXIT_VALIDATION};
