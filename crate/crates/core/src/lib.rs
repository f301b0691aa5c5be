//! Event-camera spiking object detection.
//!
//! Voxel-cube event encoding, a small reverse-mode autodiff engine, PLIF
//! spiking networks with multi-scale fusion, spike decoding, losses, an
//! SSD-style detection head, training loops and energy accounting.

pub mod autograd;
pub mod cli;
pub mod decode;
pub mod detect;
pub mod error;
pub mod events;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod snn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
