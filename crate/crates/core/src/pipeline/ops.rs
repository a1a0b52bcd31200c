use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{
    estimate_template, propagate_sequence, read_boxes_csv, read_keypoints2d_csv, read_keypoints3d_csv, write_boxes_csv,
    write_keypoints2d_csv, write_keypoints3d_csv, AnnotatedFrame, AnnotationError, IndividualInputs, Keypoint2dRow,
    KeypointId, KeypointTemplate, TemplateOptions, TemplateWarning,
};
use crate::calibration::{calibrate_extrinsics, match_clicks, CalibrationReport};
use crate::formats::{atomic_write, read_file, read_tracks_csv, write_camera_file, write_tracks_csv, FormatError};
use crate::geometry::{NamedCamera, Point3};
use crate::mocap::{
    read_marker_csv, repair_labels, track_sequence, write_marker_csv, BodyPart, BodyTrack, MarkerFrame, RepairLog,
};
use crate::qc::{
    count_unique_poses, error_samples, filter_frames, gap_statistics, match_2d, pck_report, pose_orientation,
    read_predictions_csv, rmse_report, FilterConfig, FilterReport, GapHistogram, PckEntry, PoseOrientation,
    PredictionRecord, RmseEntry, UniquePoseCounts,
};
use crate::sync::{read_count_csv, read_intensity_csv, synchronize, ClockMap};

use super::{PipelineError, Session};

pub const REPAIRED_MARKERS: &str = "markers_repaired.csv";
pub const TRACKS: &str = "tracks.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(FormatError::from)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), FormatError>) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Fits a clock per camera from its flash trace and the mo-cap marker-count trace and stores
/// it in the manifest.
pub fn run_sync(session: &mut Session) -> Result<Vec<(String, ClockMap)>, PipelineError> {
    let m = &session.manifest;
    let cfg = m.config.sync;
    let counts = m
        .mocap_counts
        .as_ref()
        .ok_or_else(|| PipelineError::Missing("manifest has no mocap_counts trace".into()))?;
    let mocap = read_count_csv(&read_file(&session.resolve(counts))?[..], m.mocap_rate)?;
    let mut out = Vec::new();
    for c in &m.cameras {
        let p = c
            .intensity
            .as_ref()
            .ok_or_else(|| PipelineError::Missing(format!("camera {} has no intensity trace", c.id)))?;
        let video = read_intensity_csv(&read_file(&session.resolve(p))?[..], m.video_rate)?;
        out.push((c.id.clone(), synchronize(&video, &mocap, &cfg)?));
    }
    for (entry, (_, clock)) in session.manifest.cameras.iter_mut().zip(&out) {
        entry.clock = Some(*clock);
    }
    session.save()?;
    let report: BTreeMap<&str, &ClockMap> = out.iter().map(|(c, k)| (c.as_str(), k)).collect();
    write_json(&session.out("sync.json"), &report)?;
    Ok(out)
}

/// Relabels swapped markers of every body and writes the repaired stream and per-body logs.
pub fn run_repair(session: &Session) -> Result<Vec<RepairLog>, PipelineError> {
    let defs = session.defs()?;
    let mut frames = session.raw_markers()?;
    let mut logs = Vec::new();
    for def in &defs {
        let (repaired, log) = repair_labels(&frames, def, &session.manifest.config.repair);
        frames = repaired;
        atomic_write(
            &session.out(&format!("repair/{}.log", def.body_id)),
            log.to_text().as_bytes(),
        )?;
        logs.push(log);
    }
    atomic_write(
        &session.out(REPAIRED_MARKERS),
        &csv_bytes(|b| write_marker_csv(b, &frames))?,
    )?;
    Ok(logs)
}

fn tracking_input(session: &Session) -> Result<Vec<MarkerFrame>, PipelineError> {
    let repaired = session.out(REPAIRED_MARKERS);
    if repaired.exists() {
        Ok(read_marker_csv(&read_file(&repaired)?[..])?)
    } else {
        session.raw_markers()
    }
}

/// Tracks every body; uses the repaired marker stream when `repair` has run.
pub fn run_track(session: &Session) -> Result<Vec<BodyTrack>, PipelineError> {
    let defs = session.defs()?;
    let frames = tracking_input(session)?;
    let tracks = track_sequence(&frames, &defs, &session.manifest.config.track);
    atomic_write(&session.out(TRACKS), &csv_bytes(|b| write_tracks_csv(b, &tracks))?)?;
    Ok(tracks)
}

fn load_or_track(session: &Session) -> Result<Vec<BodyTrack>, PipelineError> {
    let p = session.out(TRACKS);
    if p.exists() {
        Ok(read_tracks_csv(&read_file(&p)?[..])?)
    } else {
        run_track(session)
    }
}

/// Solves every camera that has calibration clicks and rewrites its calibration file.
/// Returns the reports and the cameras left untouched for lack of clicks.
pub fn run_calibrate(session: &Session) -> Result<(Vec<CalibrationReport>, Vec<String>), PipelineError> {
    let clicks = session.calibration_clicks()?;
    let frames = session.raw_markers()?;
    let cameras = session.cameras()?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (entry, cam) in session.manifest.cameras.iter().zip(&cameras) {
        if !clicks.iter().any(|c| c.camera_id == entry.id) {
            skipped.push(entry.id.clone());
            continue;
        }
        let clock = entry
            .clock
            .ok_or_else(|| PipelineError::Missing(format!("camera {} has no clock; run sync first", entry.id)))?;
        let (obs, unmatched) = match_clicks(&clicks, &entry.id, &frames, &clock);
        let calibration_error = |source| PipelineError::Calibration {
            camera: entry.id.clone(),
            source: Box::new(source),
        };
        let (extrinsic, mut report) =
            calibrate_extrinsics(&obs, &cam.model.intrinsics, &session.manifest.config.calibration)
                .map_err(calibration_error)?;
        report.unmatched_clicks = unmatched;
        let mut updated = cam.clone();
        updated.model.extrinsic = extrinsic;
        write_camera_file(&session.resolve(&entry.calibration), &updated)?;
        reports.push(report);
    }
    write_json(
        &session.out("calibration_report.json"),
        &serde_json::json!({ "reports": reports, "uncalibrated": skipped }),
    )?;
    Ok((reports, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateBuild {
    pub templates: Vec<KeypointTemplate>,
    pub warnings: BTreeMap<String, Vec<TemplateWarning>>,
}

/// Estimates a template for every individual with manual clicks.
pub fn build_templates(session: &Session) -> Result<TemplateBuild, PipelineError> {
    let annotations = session.annotations()?;
    if annotations.is_empty() {
        return Err(PipelineError::Missing("no manual annotations".into()));
    }
    let cameras = session.cameras()?;
    let clock = session.clock()?;
    let tracks = load_or_track(session)?;
    let mut build = TemplateBuild {
        templates: Vec::new(),
        warnings: BTreeMap::new(),
    };
    for ind in &session.manifest.individuals {
        if !annotations.iter().any(|a| a.individual_id == ind.individual_id) {
            continue;
        }
        let (t, w) = estimate_template(
            ind,
            &annotations,
            &cameras,
            &tracks,
            &clock,
            &TemplateOptions::default(),
        )?;
        build.warnings.insert(ind.individual_id.clone(), w);
        build.templates.push(t);
    }
    Ok(build)
}

fn template_path(session: &Session, individual: &str) -> std::path::PathBuf {
    session.out(&format!("templates/{individual}.json"))
}

/// Builds templates and writes `templates/<individual>.json` plus `template_report.json`.
pub fn run_template(session: &Session) -> Result<TemplateBuild, PipelineError> {
    let build = build_templates(session)?;
    for t in &build.templates {
        write_json(&template_path(session, &t.individual_id), t)?;
    }
    write_json(&session.out("template_report.json"), &build)?;
    Ok(build)
}

fn load_templates(session: &Session) -> Result<Vec<KeypointTemplate>, PipelineError> {
    let ids: Vec<&str> = session
        .manifest
        .individuals
        .iter()
        .map(|i| i.individual_id.as_str())
        .collect();
    if ids.iter().all(|id| template_path(session, id).exists()) {
        return ids
            .iter()
            .map(|id| {
                let t: KeypointTemplate =
                    serde_json::from_slice(&read_file(&template_path(session, id))?).map_err(FormatError::from)?;
                Ok(t)
            })
            .collect();
    }
    Ok(run_template(session)?.templates)
}

/// Propagates every template over the annotated video range and writes the 2D, 3D and box
/// files.
pub fn run_propagate(session: &Session) -> Result<Vec<AnnotatedFrame>, PipelineError> {
    let cameras = session.cameras()?;
    let clock = session.clock()?;
    let tracks = load_or_track(session)?;
    let templates = load_templates(session)?;
    let track = |body: &str| {
        tracks
            .iter()
            .find(|t| t.body_id == body)
            .ok_or_else(|| AnnotationError::UnknownBody(body.to_string()))
    };
    let mut inputs = Vec::new();
    for ind in &session.manifest.individuals {
        let Some(template) = templates.iter().find(|t| t.individual_id == ind.individual_id) else {
            return Err(PipelineError::Missing(format!("no template for {}", ind.individual_id)));
        };
        inputs.push(IndividualInputs {
            individual: ind,
            template,
            head: track(ind.body_for(BodyPart::Head))?,
            backpack: track(ind.body_for(BodyPart::Backpack))?,
        });
    }
    let frames = propagate_sequence(&inputs, &cameras, &clock, session.video_range());
    write_annotations(session, &frames, &cameras)?;
    Ok(frames)
}

fn write_annotations(
    session: &Session,
    frames: &[AnnotatedFrame],
    cameras: &[NamedCamera],
) -> Result<(), PipelineError> {
    for (i, c) in cameras.iter().enumerate() {
        atomic_write(
            &session.out(&format!("keypoints2d_{}.csv", c.id)),
            &csv_bytes(|b| write_keypoints2d_csv(b, frames, i))?,
        )?;
    }
    atomic_write(
        &session.out("keypoints3d.csv"),
        &csv_bytes(|b| write_keypoints3d_csv(b, frames))?,
    )?;
    atomic_write(&session.out("boxes.csv"), &csv_bytes(|b| write_boxes_csv(b, frames))?)?;
    Ok(())
}

fn predictions(session: &Session) -> Result<Vec<PredictionRecord>, PipelineError> {
    let p = session
        .manifest
        .predictions
        .as_ref()
        .ok_or_else(|| PipelineError::Missing("manifest has no predictions file".into()))?;
    Ok(read_predictions_csv(&read_file(&session.resolve(p))?[..])?)
}

fn generated_2d(session: &Session) -> Result<Vec<(String, Keypoint2dRow)>, PipelineError> {
    let mut out = Vec::new();
    for c in &session.manifest.cameras {
        let p = session.out(&format!("keypoints2d_{}.csv", c.id));
        if !p.exists() {
            return Err(PipelineError::Missing(format!(
                "{} is missing; run propagate first",
                p.display()
            )));
        }
        out.extend(
            read_keypoints2d_csv(&read_file(&p)?[..])?
                .into_iter()
                .map(|r| (c.id.clone(), r)),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaReport {
    pub sequence_id: String,
    pub filter: FilterReport,
    /// Runs of consecutive video frames with at least one dropped instance.
    pub gaps: GapHistogram,
    pub gap_fraction_up_to_30: f64,
}

/// GESD filtering of external predictions against the generated 2D annotations.
pub fn run_qa_filter(session: &Session, config: &FilterConfig) -> Result<QaReport, PipelineError> {
    let samples = error_samples(
        &session.manifest.sequence_id,
        &predictions(session)?,
        &generated_2d(session)?,
    );
    let filter = filter_frames(&samples, config);
    let gaps = gap_statistics(&filter.dropped_frames());
    let report = QaReport {
        sequence_id: session.manifest.sequence_id.clone(),
        gap_fraction_up_to_30: gaps.fraction_up_to_30(),
        filter,
        gaps,
    };
    write_json(&session.out("qa_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence_id: String,
    pub pairs: usize,
    pub thresholds: Vec<f64>,
    pub rmse_px: Vec<RmseEntry>,
    pub pck: Vec<PckEntry>,
}

/// Per-keypoint RMSE and PCK of the external predictions against the generated annotations.
pub fn run_metrics(session: &Session, thresholds: &[f64]) -> Result<MetricsReport, PipelineError> {
    let boxes_path = session.out("boxes.csv");
    let boxes = if boxes_path.exists() {
        read_boxes_csv(&read_file(&boxes_path)?[..])?
    } else {
        Vec::new()
    };
    let pairs = match_2d(&predictions(session)?, &generated_2d(session)?, &boxes);
    let rmse_px = rmse_report(&pairs)?;
    let pck = pck_report(&pairs, thresholds)?;
    let report = MetricsReport {
        sequence_id: session.manifest.sequence_id.clone(),
        pairs: pairs.len(),
        thresholds: thresholds.to_vec(),
        rmse_px,
        pck,
    };
    write_json(&session.out("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseVariationReport {
    pub bin_deg: f64,
    /// (frame, individual) samples with a valid 3D pose.
    pub samples: usize,
    /// Parts whose plane could not be computed.
    pub degenerate: usize,
    pub counts: UniquePoseCounts,
}

/// Counts distinct head and body orientations in the generated 3D annotations.
pub fn run_pose_variation(session: &Session, bin_deg: f64) -> Result<PoseVariationReport, PipelineError> {
    let p = session.out("keypoints3d.csv");
    if !p.exists() {
        return Err(PipelineError::Missing(format!(
            "{} is missing; run propagate first",
            p.display()
        )));
    }
    let rows = read_keypoints3d_csv(&read_file(&p)?[..])?;
    let mut grouped: BTreeMap<(i64, String), Vec<(KeypointId, Point3)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.valid == 1) {
        if let (Some(x), Some(y), Some(z)) = (r.x, r.y, r.z) {
            grouped
                .entry((r.frame, r.individual.clone()))
                .or_default()
                .push((r.keypoint, Point3::new(x, y, z)));
        }
    }
    let mut degenerate = 0;
    let mut orient = |part, kp: &[(KeypointId, Point3)]| -> Option<PoseOrientation> {
        let o = pose_orientation(part, kp).ok();
        degenerate += usize::from(o.is_none());
        o
    };
    let samples: Vec<(Option<PoseOrientation>, Option<PoseOrientation>)> = grouped
        .values()
        .map(|kp| (orient(BodyPart::Head, kp), orient(BodyPart::Backpack, kp)))
        .collect();
    let report = PoseVariationReport {
        bin_deg,
        samples: samples.len(),
        degenerate,
        counts: count_unique_poses(&samples, bin_deg)?,
    };
    write_json(&session.out("pose_variation.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    #[test]
    fn qa_filter_requires_generated_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(&SceneSpec {
            video_frames: 30,
            rendered_frames: 0,
            ..SceneSpec::default()
        });
        let path = crate::pipeline::write_scene(&scene, dir.path()).unwrap();
        let s = Session::load(&path).unwrap();
        let e = run_qa_filter(&s, &FilterConfig::default()).unwrap_err();
        assert_eq!(e.code(), "MissingInput");
    }
}
