//! The fusion-pyramid building blocks: residual refinement, region pyramid
//! attention, multi-scale attention fusion and adaptive ASPP.

mod aspp;
mod fusion;
mod region;
mod resconv;

pub use aspp::{AdaptiveAspp, AsppBranches, AsppConfig, CrsAtt};
pub use fusion::{Aggregation, AttFuse, MuAttFusion, SameLayerMode};
pub use region::{RePyAtt, RegionGroup, RegionPyramidConfig, RegionSelfAttention};
pub use resconv::ResConv;
