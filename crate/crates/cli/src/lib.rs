//! Batch front end: fitting, analysis reports, layer scrolling and figures.

pub mod cli;
pub mod document;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use document::ReportDocument;
pub use error::{CliError, CliResult};
