//! Camera extrinsics from clicked marker pixels paired with mo-cap positions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{solve_pnp, CameraModel, GeometryError, Intrinsics, Pixel, Point3, RigidTransform};
use crate::mocap::MarkerFrame;
use crate::sync::ClockMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Every principal extent of the pooled 3D points must exceed this, mm.
    pub min_extent_mm: f64,
    pub max_rms_px: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            min_extent_mm: 200.0,
            max_rms_px: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("correspondences span only {extents:?} mm along their principal axes")]
    PoorCoverage { extents: [f64; 3] },
    #[error("reprojection RMS {rms_px:.2} px exceeds the limit")]
    HighReprojection { rms_px: f64, extrinsic: RigidTransform },
    #[error("no observations for camera {0}")]
    NoObservations(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl CalibrationError {
    pub fn code(&self) -> &'static str {
        match self {
            CalibrationError::PoorCoverage { .. } => "PoorCoverage",
            CalibrationError::HighReprojection { .. } => "HighReprojection",
            CalibrationError::NoObservations(_) => "NoObservations",
            CalibrationError::Geometry(g) => g.code(),
        }
    }
}

/// One clicked marker in a calibration frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationClick {
    pub marker_id: String,
    pub u: f64,
    pub v: f64,
}

/// Record of the calibration-click file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickObservation {
    pub camera_id: String,
    pub video_frame: i64,
    pub clicks: Vec<CalibrationClick>,
}

/// Clicked pixels of one frame paired with their world positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicObservation {
    pub camera_id: String,
    pub video_frame: i64,
    pub world: Vec<Point3>,
    pub pixels: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationError {
    pub video_frame: i64,
    pub points: usize,
    pub rms_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub camera_id: String,
    pub correspondences: usize,
    pub rms_px: f64,
    /// Ranges of the pooled 3D points along their principal axes, descending, mm.
    pub extents_mm: [f64; 3],
    pub per_observation: Vec<ObservationError>,
    /// Clicks skipped because the marker was not reconstructed at the synchronized frame.
    pub unmatched_clicks: usize,
}

/// Pairs clicks with mo-cap positions at the synchronized mo-cap frame. Returns the
/// observations for `camera_id` and the number of clicks that found no valid marker.
pub fn match_clicks(
    clicks: &[ClickObservation],
    camera_id: &str,
    frames: &[MarkerFrame],
    clock: &ClockMap,
) -> (Vec<ExtrinsicObservation>, usize) {
    let mut unmatched = 0;
    let mut out = Vec::new();
    for obs in clicks.iter().filter(|o| o.camera_id == camera_id) {
        let target = clock.map_time(obs.video_frame);
        let frame = frames
            .binary_search_by_key(&target, |f| f.frame_index)
            .ok()
            .map(|i| &frames[i]);
        let mut e = ExtrinsicObservation {
            camera_id: obs.camera_id.clone(),
            video_frame: obs.video_frame,
            world: Vec::new(),
            pixels: Vec::new(),
        };
        for c in &obs.clicks {
            match frame.and_then(|f| f.position(&c.marker_id)) {
                Some(p) => {
                    e.world.push(p);
                    e.pixels.push(Pixel::new(c.u, c.v));
                }
                None => unmatched += 1,
            }
        }
        if !e.world.is_empty() {
            out.push(e);
        }
    }
    (out, unmatched)
}

/// Ranges of a point cloud along its principal axes, descending.
pub fn principal_extents(points: &[Point3]) -> [f64; 3] {
    if points.is_empty() {
        return [0.0; 3];
    }
    let n = points.len() as f64;
    let c = points.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n;
    let cov = points.iter().fold(nalgebra::Matrix3::zeros(), |a, p| {
        let d = p.coords - c;
        a + d * d.transpose()
    }) / n;
    let eig = cov.symmetric_eigen();
    let mut ext: Vec<f64> = (0..3)
        .map(|k| {
            let axis = eig.eigenvectors.column(k);
            let proj = points.iter().map(|p| (p.coords - c).dot(&axis));
            let (lo, hi) = proj.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect();
    ext.sort_by(|a, b| b.total_cmp(a));
    [ext[0], ext[1], ext[2]]
}

/// One PnP solve over the correspondences of all observations.
pub fn calibrate_extrinsics(
    observations: &[ExtrinsicObservation],
    intrinsics: &Intrinsics,
    config: &CalibrationConfig,
) -> Result<(RigidTransform, CalibrationReport), CalibrationError> {
    let camera_id = observations
        .first()
        .map(|o| o.camera_id.clone())
        .ok_or_else(|| CalibrationError::NoObservations(String::new()))?;
    let world: Vec<Point3> = observations.iter().flat_map(|o| o.world.iter().copied()).collect();
    let pixels: Vec<Pixel> = observations.iter().flat_map(|o| o.pixels.iter().copied()).collect();
    let extents = principal_extents(&world);
    if extents[2] <= config.min_extent_mm {
        return Err(CalibrationError::PoorCoverage { extents });
    }
    let sol = solve_pnp(&world, &pixels, intrinsics)?;
    let cam = CameraModel::new(*intrinsics, sol.extrinsic)?;
    let per_observation = observations
        .iter()
        .map(|o| {
            let sq: f64 = o
                .world
                .iter()
                .zip(&o.pixels)
                .map(|(w, px)| (cam.project_camera_point(&cam.to_camera(w)) - px).norm_squared())
                .sum();
            ObservationError {
                video_frame: o.video_frame,
                points: o.world.len(),
                rms_px: (sq / o.world.len().max(1) as f64).sqrt(),
            }
        })
        .collect();
    if sol.rms_px > config.max_rms_px {
        return Err(CalibrationError::HighReprojection {
            rms_px: sol.rms_px,
            extrinsic: sol.extrinsic,
        });
    }
    Ok((
        sol.extrinsic,
        CalibrationReport {
            camera_id,
            correspondences: world.len(),
            rms_px: sol.rms_px,
            extents_mm: extents,
            per_observation,
            unmatched_clicks: 0,
        },
    ))
}
