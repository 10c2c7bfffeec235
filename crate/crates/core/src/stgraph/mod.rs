//! Spatial road graphs and their spatial-temporal unified expansion.

mod spatial;
mod unified;

pub use spatial::SpatialGraph;
pub use unified::{StCoord, UnifiedGraph};
