use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::read_keypoints3d_csv;
use crate::formats::{atomic_write, read_file, FormatError};
use crate::geometry::TriangulationOptions;
use crate::hybrid::{
    compare_fills, fill_linear, fill_triangulation, introduce_gaps, FillComparison, Gap, GapSpec, KeypointTrack,
};
use crate::qc::read_predictions_csv;

use super::{PipelineError, Session};

/// Gap-filling experiment settings. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Target fraction of frames removed.
    pub fraction: f64,
    /// Inclusive gap length range, frames.
    pub gap_length: [usize; 2],
    /// Session providing the calibrated cameras.
    pub manifest: PathBuf,
    /// Reference 3D keypoints (`frame,individual,keypoint,x,y,z,valid`).
    pub truth: PathBuf,
    /// 2D detections used for triangulation.
    pub predictions: PathBuf,
    pub individual: String,
    /// Output directory for `hybrid_report.csv` and `hybrid_report.json`.
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub gaps: Vec<Gap>,
    pub removed_frames: usize,
    pub total_frames: usize,
    /// Gap entries the triangulation could not fill.
    pub unfilled: usize,
    pub comparison: FillComparison,
}

/// Removes frames from the reference track, fills them by triangulation and by linear
/// interpolation, and reports per-keypoint RMSE of both.
pub fn run_hybrid_experiment(
    config_path: &Path,
    seed_override: Option<u64>,
) -> Result<ExperimentOutcome, PipelineError> {
    let text = String::from_utf8(read_file(config_path)?)
        .map_err(|e| PipelineError::Usage(format!("{}: {e}", config_path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(FormatError::from)?;
    let root = config_path.parent().unwrap_or(Path::new(""));
    let session = Session::load(&root.join(&cfg.manifest))?;
    let cameras = session.cameras()?;
    let truth_rows = read_keypoints3d_csv(&read_file(&root.join(&cfg.truth))?[..])?;
    let truth = KeypointTrack::from_rows(&truth_rows, &cfg.individual)?;
    let predictions = read_predictions_csv(&read_file(&root.join(&cfg.predictions))?[..])?;

    let seed = seed_override.unwrap_or(cfg.seed);
    let spec = GapSpec {
        fraction: cfg.fraction,
        min_len: cfg.gap_length[0],
        max_len: cfg.gap_length[1],
        seed,
    };
    let (gapped, gaps) = introduce_gaps(&truth, &spec)?;
    let tri = fill_triangulation(
        &gapped,
        &gaps,
        &cfg.individual,
        &predictions,
        &cameras,
        &TriangulationOptions::default(),
    );
    let lin = fill_linear(&gapped, &gaps)?;
    let comparison = compare_fills(&truth, &[("triangulation", &tri.track), ("linear", &lin)], &gaps);

    let out = root.join(&cfg.output);
    let mut csv = Vec::new();
    comparison.write_csv(&mut csv)?;
    atomic_write(&out.join("hybrid_report.csv"), &csv)?;
    let outcome = ExperimentOutcome {
        seed,
        removed_frames: gaps.iter().map(|g| g.len).sum(),
        total_frames: truth.len(),
        gaps,
        unfilled: tri.unfilled.len(),
        comparison,
    };
    atomic_write(
        &out.join("hybrid_report.json"),
        &serde_json::to_vec_pretty(&outcome).map_err(FormatError::from)?,
    )?;
    Ok(outcome)
}
