//! readout-sim: physics and statistics of repetitive state-selective
//! fluorescence readout of 171Yb nuclear-spin qubits in optical tweezers.

pub mod analysis;
pub mod angular;
pub mod atomic;
pub mod circuit;
pub mod constants;
pub mod data;
pub mod dynamics;
pub mod emission;
pub mod error;
pub mod par;
pub mod rates;
pub mod spam;

pub use error::{Result, SimError};
