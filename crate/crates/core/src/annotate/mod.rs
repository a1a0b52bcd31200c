//! Keypoint templates from sparse clicks, and their propagation to every frame and view.

mod bbox;
mod io;
mod keypoints;
mod propagate;
mod template;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use bbox::{bounding_box, filter_training_crops, overlap_fraction, BBox, BBOX_MARGIN_PX, CROP_OVERLAP_LIMIT};
pub use io::{
    read_boxes_csv, read_keypoints2d_csv, read_keypoints3d_csv, write_boxes_csv, write_keypoints2d_csv,
    write_keypoints3d_csv, BoxRow, Keypoint2dRow, Keypoint3dRow,
};
pub use keypoints::{validate_annotations, Individual, KeypointEntry, KeypointId, KeypointTemplate, ManualAnnotation};
pub use propagate::{
    propagate_frame, propagate_sequence, AnnotatedFrame, IndividualFrame, IndividualInputs, ViewAnnotation,
};
pub use template::{estimate_template, TemplateOptions, TemplateWarning};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("keypoint {0} is never annotated in two or more views")]
    InsufficientViews(KeypointId),
    #[error("keypoint {0}: no annotated frame has a valid pose for its body part")]
    InvalidPose(KeypointId),
    #[error("duplicate annotation for {0}")]
    DuplicateAnnotation(String),
    #[error("annotation {0}: occluded clicks carry no pixel, visible clicks need one")]
    InconsistentClick(String),
    #[error("unknown camera {0}")]
    UnknownCamera(String),
    #[error("unknown body {0}")]
    UnknownBody(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::InsufficientViews(_) => "InsufficientViews",
            AnnotationError::InvalidPose(_) => "InvalidPose",
            AnnotationError::DuplicateAnnotation(_) => "DuplicateAnnotation",
            AnnotationError::InconsistentClick(_) => "InconsistentClick",
            AnnotationError::UnknownCamera(_) => "UnknownCamera",
            AnnotationError::UnknownBody(_) => "UnknownBody",
            AnnotationError::Geometry(g) => g.code(),
        }
    }
}
