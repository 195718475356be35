//! Photoacoustic tomography with thermodynamic attenuation.

pub mod adjoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod forward;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod medium;
pub mod par;
pub mod selftest;

pub use error::{Error, Result};
