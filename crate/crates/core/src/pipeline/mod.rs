//! Orchestration shared by the command line and the HTTP service.

mod experiment;
mod manifest;
mod ops;
mod scene;

use thiserror::Error;

use crate::annotate::AnnotationError;
use crate::calibration::CalibrationError;
use crate::formats::FormatError;
use crate::geometry::GeometryError;
use crate::hybrid::HybridError;
use crate::mocap::MocapError;
use crate::qc::QcError;
use crate::sync::SyncError;

pub use experiment::{run_hybrid_experiment, ExperimentConfig, ExperimentOutcome};
pub use manifest::{CameraEntry, Manifest, PipelineConfig, Session};
pub use ops::{
    build_templates, run_calibrate, run_metrics, run_pose_variation, run_propagate, run_qa_filter, run_repair,
    run_sync, run_template, run_track, MetricsReport, PoseVariationReport, QaReport, TemplateBuild,
};
pub use scene::{write_scene, TRUTH_DIR};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Mocap(#[from] MocapError),
    #[error("camera {camera}: {source}")]
    Calibration {
        camera: String,
        #[source]
        source: Box<CalibrationError>,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    /// Name of the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            PipelineError::Format(_) => "formats",
            PipelineError::Sync(_) => "sync",
            PipelineError::Mocap(_) => "mocap",
            PipelineError::Calibration { .. } => "calibration",
            PipelineError::Annotation(_) => "annotate",
            PipelineError::Qc(_) => "qc",
            PipelineError::Hybrid(_) => "hybrid",
            PipelineError::Geometry(_) => "geometry",
            PipelineError::Manifest(_) | PipelineError::Missing(_) | PipelineError::Usage(_) => "pipeline",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Format(e) => e.code(),
            PipelineError::Sync(e) => e.code(),
            PipelineError::Mocap(e) => e.code(),
            PipelineError::Calibration { source, .. } => source.code(),
            PipelineError::Annotation(e) => e.code(),
            PipelineError::Qc(e) => e.code(),
            PipelineError::Hybrid(e) => e.code(),
            PipelineError::Geometry(e) => e.code(),
            PipelineError::Manifest(_) => "InvalidManifest",
            PipelineError::Missing(_) => "MissingInput",
            PipelineError::Usage(_) => "Usage",
        }
    }

    /// `{"error": {"module", "code", "message"}}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "module": self.module(),
                "code": self.code(),
                "message": self.to_string(),
            }
        })
    }
}
