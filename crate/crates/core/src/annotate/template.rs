use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::{triangulate, CameraModel, NamedCamera, Pixel, Point3, TriangulationOptions};
use crate::mocap::BodyTrack;
use crate::sync::ClockMap;

use super::keypoints::{
    validate_annotations, Individual, KeypointEntry, KeypointId, KeypointTemplate, ManualAnnotation,
};
use super::AnnotationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateOptions {
    pub triangulation: TriangulationOptions,
    /// Samples farther than this many median absolute deviations from the per-keypoint
    /// median are dropped before averaging.
    pub mad_factor: f64,
    /// Per-axis spread above which a warning is raised, mm.
    pub high_spread_mm: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self {
            triangulation: TriangulationOptions::default(),
            mad_factor: 3.0,
            high_spread_mm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateWarning {
    HighSpread {
        keypoint: KeypointId,
        spread: [f64; 3],
    },
    /// Annotated frames dropped because no valid pose existed at the synchronized mo-cap frame.
    InvalidPose {
        keypoint: KeypointId,
        frames: Vec<i64>,
    },
    /// Frames whose views could not be triangulated.
    Untriangulated {
        keypoint: KeypointId,
        frames: Vec<i64>,
    },
    OutliersDropped {
        keypoint: KeypointId,
        frames: Vec<i64>,
    },
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Samples this close to the median are always kept, mm.
const MAD_FLOOR_MM: f64 = 1.0;

/// Indices of samples kept by the MAD gate.
fn mad_gate(samples: &[Point3], factor: f64) -> Vec<usize> {
    if samples.len() < 3 {
        return (0..samples.len()).collect();
    }
    let med = Point3::new(
        median(samples.iter().map(|p| p.x).collect()),
        median(samples.iter().map(|p| p.y).collect()),
        median(samples.iter().map(|p| p.z).collect()),
    );
    let dist: Vec<f64> = samples.iter().map(|p| (p - med).norm()).collect();
    let mad = median(dist.clone());
    let limit = (factor * mad).max(MAD_FLOOR_MM);
    (0..samples.len()).filter(|&i| dist[i] <= limit).collect()
}

/// Triangulates every keypoint in every frame annotated from two or more views, maps the
/// point into the local frame of its body part, and averages over frames.
pub fn estimate_template(
    individual: &Individual,
    annotations: &[ManualAnnotation],
    cameras: &[NamedCamera],
    tracks: &[BodyTrack],
    clock: &ClockMap,
    options: &TemplateOptions,
) -> Result<(KeypointTemplate, Vec<TemplateWarning>), AnnotationError> {
    validate_annotations(annotations)?;
    let camera = |id: &str| -> Result<&CameraModel, AnnotationError> {
        cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| &c.model)
            .ok_or_else(|| AnnotationError::UnknownCamera(id.to_string()))
    };
    let track = |body: &str| -> Result<&BodyTrack, AnnotationError> {
        tracks
            .iter()
            .find(|t| t.body_id == body)
            .ok_or_else(|| AnnotationError::UnknownBody(body.to_string()))
    };

    // (keypoint, frame) → clicks sorted by camera id
    let mut grouped: BTreeMap<(KeypointId, i64), Vec<(&str, Pixel)>> = BTreeMap::new();
    for a in annotations
        .iter()
        .filter(|a| a.individual_id == individual.individual_id)
    {
        camera(&a.camera_id)?;
        if let Some(px) = a.pixel() {
            grouped
                .entry((a.keypoint, a.video_frame))
                .or_default()
                .push((a.camera_id.as_str(), px));
        }
    }

    let mut warnings = Vec::new();
    let mut keypoints = BTreeMap::new();
    for k in KeypointId::ALL {
        let body_track = track(individual.body_for(k.part()))?;
        let mut samples: Vec<(i64, Point3)> = Vec::new();
        let mut multi_view = false;
        let mut no_pose = Vec::new();
        let mut failed = Vec::new();
        for (&(_, frame), clicks) in grouped.range((k, i64::MIN)..=(k, i64::MAX)) {
            if clicks.len() < 2 {
                continue;
            }
            multi_view = true;
            let Some(pose) = body_track.pose_at(clock.map_time(frame)) else {
                no_pose.push(frame);
                continue;
            };
            let mut obs: Vec<(&CameraModel, Pixel)> = Vec::with_capacity(clicks.len());
            let mut sorted = clicks.clone();
            sorted.sort_by(|a, b| a.0.cmp(b.0));
            for (cam, px) in sorted {
                obs.push((camera(cam)?, px));
            }
            match triangulate(&obs, &options.triangulation) {
                Ok(t) => samples.push((frame, pose.inverse().apply(&t.point))),
                Err(_) => failed.push(frame),
            }
        }
        if samples.is_empty() {
            return Err(if multi_view && failed.is_empty() {
                AnnotationError::InvalidPose(k)
            } else {
                AnnotationError::InsufficientViews(k)
            });
        }
        if !no_pose.is_empty() {
            warnings.push(TemplateWarning::InvalidPose {
                keypoint: k,
                frames: no_pose,
            });
        }
        if !failed.is_empty() {
            warnings.push(TemplateWarning::Untriangulated {
                keypoint: k,
                frames: failed,
            });
        }

        let points: Vec<Point3> = samples.iter().map(|s| s.1).collect();
        let kept = mad_gate(&points, options.mad_factor);
        if kept.len() < points.len() {
            let frames = (0..points.len())
                .filter(|i| !kept.contains(i))
                .map(|i| samples[i].0)
                .collect();
            warnings.push(TemplateWarning::OutliersDropped { keypoint: k, frames });
        }
        let n = kept.len();
        let mean = kept
            .iter()
            .fold(nalgebra::Vector3::zeros(), |a, &i| a + points[i].coords)
            / n as f64;
        let spread = (n >= 2).then(|| {
            let var = kept.iter().fold(nalgebra::Vector3::zeros(), |a, &i| {
                let d = points[i].coords - mean;
                a + d.component_mul(&d)
            }) / (n as f64 - 1.0);
            [var.x.sqrt(), var.y.sqrt(), var.z.sqrt()]
        });
        if let Some(s) = spread {
            if s.iter().any(|v| *v > options.high_spread_mm) {
                warnings.push(TemplateWarning::HighSpread { keypoint: k, spread: s });
            }
        }
        keypoints.insert(
            k,
            KeypointEntry {
                offset: [mean.x, mean.y, mean.z],
                n,
                spread,
            },
        );
    }
    Ok((
        KeypointTemplate {
            individual_id: individual.individual_id.clone(),
            keypoints,
        },
        warnings,
    ))
}
