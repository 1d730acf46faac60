//! Modelling, analysis and saturated feedback stabilization of the straight
//! and circular beam-and-ball systems.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod controller;
pub mod domains;
pub mod error;
pub mod linearization;
pub mod plant;
pub mod simulate;

pub use error::{Error, Result};
