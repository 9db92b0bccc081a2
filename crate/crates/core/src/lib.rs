pub mod audiogen;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod frontend;
pub mod model;
pub mod postprocess;
pub mod taxonomy;
pub mod training;
pub mod util;

pub use error::{Error, Result};
