use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{rigid_fit, Point3, RigidTransform};

use super::identify::{identify_individuals, IdentifyConfig};
use super::{MarkerFrame, MocapError, RigidBodyDef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Fits with a larger RMS residual are marked invalid, mm.
    pub residual_threshold_mm: f64,
    /// Largest per-frame marker displacement for which the previous assignment is kept, mm.
    pub stickiness_mm: f64,
    pub identify: IdentifyConfig,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            residual_threshold_mm: 3.0,
            stickiness_mm: 50.0,
            identify: IdentifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    /// local → world.
    pub pose: RigidTransform,
    pub residual_mm: f64,
    pub markers_used: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub frame_index: i64,
    /// Fitted pose, present whenever at least three markers were available.
    pub pose: Option<RigidTransform>,
    pub residual_mm: Option<f64>,
    pub valid: bool,
}

impl PoseSample {
    pub fn invalid(frame_index: i64) -> Self {
        Self {
            frame_index,
            pose: None,
            residual_mm: None,
            valid: false,
        }
    }

    /// The pose if and only if the sample is valid.
    pub fn valid_pose(&self) -> Option<&RigidTransform> {
        self.pose.as_ref().filter(|_| self.valid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTrack {
    pub body_id: String,
    /// Sorted by frame index; frames without a usable fit are present with `valid == false`.
    pub samples: Vec<PoseSample>,
}

impl BodyTrack {
    pub fn sample(&self, frame_index: i64) -> Option<&PoseSample> {
        self.samples
            .binary_search_by_key(&frame_index, |s| s.frame_index)
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Valid pose at `frame_index`, if any.
    pub fn pose_at(&self, frame_index: i64) -> Option<&RigidTransform> {
        self.sample(frame_index).and_then(|s| s.valid_pose())
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.valid).count()
    }
}

fn fit_slots(
    def: &RigidBodyDef,
    slots: &[Option<Point3>; 4],
    residual_threshold_mm: f64,
) -> Result<PoseFit, MocapError> {
    let (src, dst): (Vec<Point3>, Vec<Point3>) = def
        .template
        .iter()
        .zip(slots)
        .filter_map(|(t, o)| o.map(|o| (*t, o)))
        .unzip();
    if src.len() < 3 {
        return Err(MocapError::InsufficientMarkers { found: src.len() });
    }
    let (pose, residual_mm) = rigid_fit(&src, &dst)?;
    Ok(PoseFit {
        pose,
        residual_mm,
        markers_used: src.len(),
        valid: residual_mm <= residual_threshold_mm,
    })
}

/// Rigid fit of the body's template to the markers named by `assignment` (template order).
/// Markers missing or invalid in the frame are skipped.
pub fn fit_body_pose(
    frame: &MarkerFrame,
    def: &RigidBodyDef,
    assignment: &[String; 4],
    residual_threshold_mm: f64,
) -> Result<PoseFit, MocapError> {
    let slots = std::array::from_fn(|k| frame.position(&assignment[k]));
    fit_slots(def, &slots, residual_threshold_mm)
}

/// Per-slot marker indices claimed by each body from its previous pose, resolving
/// contested markers in favour of the closest prediction.
fn sticky_claims(
    markers: &[(&str, Point3)],
    defs: &[RigidBodyDef],
    previous: &[Option<RigidTransform>],
    radius: f64,
) -> Vec<[Option<usize>; 4]> {
    let mut options = Vec::new();
    for (b, (def, prev)) in defs.iter().zip(previous).enumerate() {
        let Some(prev) = prev else { continue };
        for (k, t) in def.template.iter().enumerate() {
            let predicted = prev.apply(t);
            for (m, (_, p)) in markers.iter().enumerate() {
                let d = (p - predicted).norm();
                if d < radius {
                    options.push((d, b, k, m));
                }
            }
        }
    }
    options.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut claims = vec![[None; 4]; defs.len()];
    let mut taken = vec![false; markers.len()];
    for (_, b, k, m) in options {
        if taken[m] || claims[b][k].is_some() {
            continue;
        }
        taken[m] = true;
        claims[b][k] = Some(m);
    }
    claims
}

/// Identity-preserving pose tracking over a sequence. Each body keeps the markers nearest
/// to its previous pose while they move less than the stickiness radius; bodies without a
/// previous pose are re-identified from their marker pattern. Failures only mark frames
/// invalid.
pub fn track_sequence(frames: &[MarkerFrame], defs: &[RigidBodyDef], config: &TrackConfig) -> Vec<BodyTrack> {
    let mut tracks: Vec<BodyTrack> = defs
        .iter()
        .map(|d| BodyTrack {
            body_id: d.body_id.clone(),
            samples: Vec::with_capacity(frames.len()),
        })
        .collect();
    let mut previous: Vec<Option<RigidTransform>> = vec![None; defs.len()];
    let mut last_frame: Option<i64> = None;

    for frame in frames {
        if last_frame.is_some_and(|f| frame.frame_index != f + 1) {
            previous.iter_mut().for_each(|p| *p = None);
        }
        last_frame = Some(frame.frame_index);
        let markers: Vec<(&str, Point3)> = frame.valid_markers().collect();
        let claims = sticky_claims(&markers, defs, &previous, config.stickiness_mm);

        let mut fits: Vec<Option<Result<PoseFit, MocapError>>> = vec![None; defs.len()];
        let mut used: HashSet<usize> = HashSet::new();
        for (b, claim) in claims.iter().enumerate() {
            if claim.iter().flatten().count() < 3 {
                continue;
            }
            let slots = claim.map(|m| m.map(|m| markers[m].1));
            let fit = fit_slots(&defs[b], &slots, config.residual_threshold_mm);
            if matches!(&fit, Ok(f) if f.valid) {
                used.extend(claim.iter().flatten());
                fits[b] = Some(fit);
            }
        }

        let pending: Vec<usize> = (0..defs.len()).filter(|&b| fits[b].is_none()).collect();
        if !pending.is_empty() {
            let remaining = MarkerFrame::new(
                frame.frame_index,
                markers
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| !used.contains(m))
                    .map(|(_, (id, p))| super::Marker::valid(*id, *p))
                    .collect(),
            );
            let subset: Vec<RigidBodyDef> = pending.iter().map(|&b| defs[b].clone()).collect();
            if let Ok(found) = identify_individuals(&remaining, &subset, &config.identify) {
                for a in found {
                    let b = pending
                        .iter()
                        .copied()
                        .find(|&b| defs[b].body_id == a.body_id)
                        .expect("identified body comes from the pending subset");
                    fits[b] = Some(fit_body_pose(
                        &remaining,
                        &defs[b],
                        &a.marker_ids,
                        config.residual_threshold_mm,
                    ));
                }
            }
        }

        for (b, fit) in fits.into_iter().enumerate() {
            let sample = match fit {
                Some(Ok(f)) => PoseSample {
                    frame_index: frame.frame_index,
                    pose: Some(f.pose),
                    residual_mm: Some(f.residual_mm),
                    valid: f.valid,
                },
                _ => PoseSample::invalid(frame.frame_index),
            };
            previous[b] = sample.valid_pose().copied();
            tracks[b].samples.push(sample);
        }
    }
    tracks
}
