//! Joint beamforming and fronthaul quantization for downlink C-RAN, learned
//! without labels through a structured recovery map.

pub mod adjoint;
pub mod baselines;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod recovery;
pub mod system;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
