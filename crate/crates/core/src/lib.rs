//! Attention-based feature fusion pyramid networks (FFPNet) for remote sensing
//! imagery: region pyramid attention, multi-scale attention fusion, adaptive
//! ASPP with cross-scale attention, the heavy-weight segmentation network and
//! the spatial–spectral hyperspectral classifier, together with the tensor
//! engine, training loop, data pipeline and metrics they run on.

pub mod attn;
pub mod autograd;
pub mod data;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
