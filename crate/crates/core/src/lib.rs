mod binio;
pub mod ann;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod fem;
pub mod manifold;
pub mod pod;
pub mod rom;
pub mod snapshots;
pub mod training;

pub use error::{Error, Result};
