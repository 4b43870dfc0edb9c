//! Backbones and the assembled networks: the three-level segmenter and the
//! spatial–spectral patch classifier.

mod backbone;
mod classifier;
mod config;
mod heavy;
mod import;

pub use backbone::{Backbone, Bottleneck, ResidualBackbone, VggBackbone};
pub use classifier::{LightSpatialFfp, SpatialSpectralNet, SpectralFfp};
pub use config::{BackboneConfig, BackboneKind, NetworkConfig};
pub use heavy::HeavyFfpNet;
pub use import::{import_weights, init_channel_replicate};
