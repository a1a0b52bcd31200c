//! Rigid transforms, camera projection, rigid alignment, triangulation and PnP.
//!
//! All lengths are millimeters, all pixel coordinates refer to the original
//! (distorted) image.

mod camera;
mod lm;
mod pnp;
mod rigid;
mod transform;
mod triangulate;

use thiserror::Error;

pub use camera::{CameraModel, Distortion, Intrinsics, Projection};
pub use pnp::{principal_std_devs, solve_pnp, PnpSolution, MIN_PNP_CORRESPONDENCES};
pub use rigid::rigid_fit;
pub use transform::{nearest_rotation, RigidTransform};
pub use triangulate::{max_ray_angle_deg, triangulate, Triangulation, TriangulationOptions};

pub type Point3 = nalgebra::Point3<f64>;
pub type Pixel = nalgebra::Point2<f64>;

/// A camera model together with its rig identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCamera {
    pub id: String,
    pub model: CameraModel,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("matrix is not a proper rotation")]
    NotARotation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("correspondence lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
}

impl GeometryError {
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::DegenerateConfiguration(_) => "DegenerateConfiguration",
            GeometryError::DegenerateGeometry(_) => "DegenerateGeometry",
            GeometryError::NonFinite => "NonFinite",
            GeometryError::NotARotation => "NotARotation",
            GeometryError::InvalidIntrinsics(_) => "InvalidIntrinsics",
            GeometryError::LengthMismatch { .. } => "LengthMismatch",
        }
    }
}
