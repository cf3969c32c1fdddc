//! Roundabout geometry, routes through it, and agent-centered raster views.

mod map;
mod path;
mod primitive;
mod raster;

pub use map::{build_roundabout, GeometryConfig, Leg, Region, RoundaboutMap, LEG_COUNT};
pub use path::{path_for, PathPiece, PathSpec};
pub use primitive::{ArcBand, Primitive};
pub use raster::{
    pixel_center, rasterize_with_margin, rasterize_view, BinaryGrid, ViewLayers, CELLS, METERS_PER_PIXEL, VIEW_PIXELS,
    VIEW_SIZE_M,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("a roundabout needs exactly 3 legs, got {0}")]
    LegCount(usize),
    #[error("leg index {0} out of range")]
    InvalidLeg(usize),
    #[error("arc position {s} outside [0, {total}]")]
    ArcOutOfRange { s: f64, total: f64 },
}
