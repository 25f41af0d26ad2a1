pub mod algebra;
pub mod cli;
pub mod config;
pub mod error;
pub mod fcs;
pub mod hennion;
pub mod process;
pub mod qmaps;
pub mod rng;

pub use error::{Error, Result};
