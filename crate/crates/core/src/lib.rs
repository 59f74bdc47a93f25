//! Joint antenna selection and antenna-domain extrapolation for massive MIMO
//! arrays, with a small reverse-mode autodiff engine to train it.

pub mod aden;
pub mod asn;
pub mod beam_codebook;
pub mod channel_sim;
pub mod config;
pub mod container;
pub mod error;
pub mod grad;
pub mod nn;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
