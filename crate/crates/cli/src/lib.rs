pub mod args;
pub mod cmd;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod settings;

pub use error::{CliError, CliResult};
