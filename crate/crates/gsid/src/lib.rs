//! Group-sparse identification of governing equations from multiple data
//! sources that share one model structure but differ in parameter values.
//!
//! The pipeline: simulate or load trajectories ([`systems`], [`series`]),
//! differentiate them ([`differentiate`]), build polynomial dictionaries
//! ([`dictionary`]), pose the joint regression ([`model`]), solve it with
//! group hard-iterative thresholding ([`solver`]), sanity-check the data
//! ([`diagnostics`]), and run repeated-trial studies ([`experiments`]).

pub mod diagnostics;
pub mod dictionary;
pub mod differentiate;
pub mod error;
pub mod experiments;
pub mod model;
pub mod series;
pub mod solver;
pub mod systems;

pub use error::{Error, Result};
