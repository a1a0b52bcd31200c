use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::annotate::{propagate_sequence, write_keypoints2d_csv, write_keypoints3d_csv, IndividualInputs};
use crate::formats::{atomic_write, write_body_defs, write_camera_file, FormatError};
use crate::mocap::{write_marker_csv, BodyPart, BodyTrack};
use crate::qc::write_predictions_csv;
use crate::sync::{write_count_csv, write_intensity_csv};
use crate::synth::SyntheticScene;

use super::{CameraEntry, Manifest, PipelineConfig, PipelineError};

/// Subdirectory of a written scene holding the ground truth.
pub const TRUTH_DIR: &str = "truth";

fn csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), FormatError>) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    atomic_write(path, &buf)?;
    Ok(())
}

fn json_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    atomic_write(path, &serde_json::to_vec_pretty(value).map_err(FormatError::from)?)?;
    Ok(())
}

/// Writes a synthetic session as a manifest plus input files into `dir` and returns the
/// manifest path. Camera clocks are set to the true clock; `sync` may overwrite them.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<PathBuf, PipelineError> {
    csv_file(&dir.join("markers.csv"), |b| write_marker_csv(b, &scene.marker_frames))?;
    write_body_defs(&dir.join("bodies.json"), &scene.defs)?;
    json_file(&dir.join("annotations.json"), &scene.annotations)?;
    json_file(&dir.join("calibration_clicks.json"), &scene.calibration_clicks)?;
    csv_file(&dir.join("predictions.csv"), |b| {
        write_predictions_csv(b, &scene.predictions)
    })?;
    csv_file(&dir.join("traces/mocap_count.csv"), |b| {
        write_count_csv(b, &scene.flash.mocap)
    })?;

    let range = scene.video_range();
    let mut cameras = Vec::new();
    for (ci, cam) in scene.cameras.iter().enumerate() {
        let calibration = PathBuf::from(format!("calibration/{}.toml", cam.id));
        write_camera_file(&dir.join(&calibration), cam)?;
        let intensity = PathBuf::from(format!("traces/{}_intensity.csv", cam.id));
        csv_file(&dir.join(&intensity), |b| write_intensity_csv(b, &scene.flash.video))?;
        let frames = PathBuf::from(format!("frames/{}", cam.id));
        std::fs::create_dir_all(dir.join(&frames)).map_err(|e| FormatError::io(&dir.join(&frames), e))?;
        for f in range.clone().take(scene.spec.rendered_frames) {
            let mut png = Vec::new();
            scene
                .render_frame(ci, f)
                .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| FormatError::Invalid(format!("png encoding: {e}")))?;
            atomic_write(&dir.join(&frames).join(format!("{f:06}.png")), &png)?;
        }
        cameras.push(CameraEntry {
            id: cam.id.clone(),
            calibration,
            frames: Some(frames),
            intensity: Some(intensity),
            clock: Some(scene.clock),
        });
    }

    write_truth(scene, &dir.join(TRUTH_DIR))?;

    let manifest = Manifest {
        sequence_id: format!("synth{}", scene.spec.seed),
        seed: scene.spec.seed,
        mocap_rate: scene.flash.mocap.frame_rate,
        video_rate: scene.flash.video.frame_rate,
        video_frames: [range.start, range.end],
        markers: "markers.csv".into(),
        bodies: "bodies.json".into(),
        output_dir: "out".into(),
        annotations: "annotations.json".into(),
        calibration_clicks: "calibration_clicks.json".into(),
        mocap_counts: Some("traces/mocap_count.csv".into()),
        predictions: Some("predictions.csv".into()),
        individuals: scene.individuals.clone(),
        cameras,
        config: PipelineConfig::default(),
    };
    let path = dir.join("manifest.toml");
    atomic_write(&path, toml::to_string(&manifest).map_err(FormatError::from)?.as_bytes())?;
    Ok(path)
}

/// True 2D/3D annotations (the true templates moved by the true poses), true templates and
/// the list of corrupted prediction instances.
fn write_truth(scene: &SyntheticScene, dir: &Path) -> Result<(), PipelineError> {
    let track = |id: &str| -> &BodyTrack {
        scene
            .true_tracks
            .iter()
            .find(|t| t.body_id == id)
            .expect("every body has a true track")
    };
    let inputs: Vec<IndividualInputs> = scene
        .individuals
        .iter()
        .zip(&scene.templates)
        .map(|(ind, template)| IndividualInputs {
            individual: ind,
            template,
            head: track(ind.body_for(BodyPart::Head)),
            backpack: track(ind.body_for(BodyPart::Backpack)),
        })
        .collect();
    let frames = propagate_sequence(&inputs, &scene.cameras, &scene.clock, scene.video_range());
    csv_file(&dir.join("keypoints3d.csv"), |b| write_keypoints3d_csv(b, &frames))?;
    for (i, c) in scene.cameras.iter().enumerate() {
        csv_file(&dir.join(format!("keypoints2d_{}.csv", c.id)), |b| {
            write_keypoints2d_csv(b, &frames, i)
        })?;
    }
    for t in &scene.templates {
        json_file(&dir.join(format!("templates/{}.json", t.individual_id)), t)?;
    }
    csv_file(&dir.join("corrupted.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        for k in &scene.corrupted {
            w.serialize(k)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(())
}
