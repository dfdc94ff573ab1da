//! Configuration, input loading, synthetic data and result files.

pub mod config;
pub mod dataset;
pub mod results;
pub mod synthetic;

pub use config::{parse_config, Config};
pub use dataset::{prepare, Prepared};
pub use results::{evaluate, read_trace, write_results};
pub use synthetic::{generate, write_dataset, SyntheticSpec};
