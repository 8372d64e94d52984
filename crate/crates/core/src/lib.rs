//! Stochastic Burgers turbulence, shock-trace detection and reduced closure models.

pub mod enkf;
pub mod error;
pub mod etd;
pub mod experiments;
pub mod forcing;
pub mod full_model;
pub mod inference;
pub mod reduced;
pub mod shock;
pub mod spectral;

pub use error::{Error, Result};
