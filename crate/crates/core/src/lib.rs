pub mod beaver;
pub mod cli;
mod codec;
pub mod data;
pub mod error;
pub mod experiments;
pub mod federated;
pub mod fss;
pub mod nn;
pub mod prg;
pub mod report;
pub mod ring;
pub mod runtime;
pub mod sharing;
pub mod train;

pub use error::{Error, Result};
