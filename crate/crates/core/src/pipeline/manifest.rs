use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{Individual, ManualAnnotation};
use crate::calibration::{CalibrationConfig, ClickObservation};
use crate::formats::{atomic_write, read_body_defs, read_camera_file, read_file, FormatError};
use crate::geometry::NamedCamera;
use crate::mocap::{read_marker_csv, MarkerFrame, RepairConfig, RigidBodyDef, TrackConfig};
use crate::qc::FilterConfig;
use crate::sync::{ClockMap, SyncConfig};

use super::PipelineError;

/// Module settings that may be overridden per session.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sync: SyncConfig,
    pub repair: RepairConfig,
    pub track: TrackConfig,
    pub calibration: CalibrationConfig,
    pub filter: FilterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: String,
    /// Calibration document (intrinsics plus extrinsic).
    pub calibration: PathBuf,
    /// Directory of pre-extracted frames named `NNNNNN.png` or `NNNNNN.jpg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    /// Flash intensity trace, `frame,intensity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<PathBuf>,
    /// Video→mo-cap clock, written by `sync`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockMap>,
}

/// One recording session. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequence_id: String,
    #[serde(default)]
    pub seed: u64,
    pub mocap_rate: f64,
    pub video_rate: f64,
    /// Video frames `[first, end)` to annotate.
    pub video_frames: [i64; 2],
    pub markers: PathBuf,
    pub bodies: PathBuf,
    pub output_dir: PathBuf,
    /// Manual keypoint clicks (JSON); may not exist yet.
    pub annotations: PathBuf,
    /// Calibration-marker clicks (JSON); may not exist yet.
    pub calibration_clicks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mocap_counts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub individuals: Vec<Individual>,
    pub cameras: Vec<CameraEntry>,
    #[serde(default)]
    pub config: PipelineConfig,
}

/// A loaded manifest together with its location.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub manifest: Manifest,
    pub path: PathBuf,
    root: PathBuf,
}

fn exists(root: &Path, p: &Path, what: &str) -> Result<(), PipelineError> {
    if root.join(p).exists() {
        Ok(())
    } else {
        Err(PipelineError::Manifest(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

impl Session {
    pub fn load(path: &Path) -> Result<Session, PipelineError> {
        let text = String::from_utf8(read_file(path)?)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = toml::from_str(&text).map_err(FormatError::from)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let s = Session {
            manifest,
            path: path.to_path_buf(),
            root,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn new(manifest: Manifest, path: &Path) -> Result<Session, PipelineError> {
        let s = Session {
            manifest,
            path: path.to_path_buf(),
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let m = &self.manifest;
        if !(m.mocap_rate > 0.0 && m.video_rate > 0.0) {
            return Err(PipelineError::Manifest("frame rates must be positive".into()));
        }
        if m.video_frames[1] <= m.video_frames[0] {
            return Err(PipelineError::Manifest(
                "video_frames must be a non-empty [first, end) range".into(),
            ));
        }
        if m.sequence_id.is_empty() || m.sequence_id.contains(['/', '\\']) {
            return Err(PipelineError::Manifest(format!(
                "invalid sequence_id {:?}",
                m.sequence_id
            )));
        }
        let mut ids = BTreeSet::new();
        for c in &m.cameras {
            if !ids.insert(c.id.as_str()) {
                return Err(PipelineError::Manifest(format!("camera {} listed twice", c.id)));
            }
            exists(&self.root, &c.calibration, &format!("calibration of camera {}", c.id))?;
            if let Some(f) = &c.frames {
                exists(&self.root, f, &format!("frame directory of camera {}", c.id))?;
            }
            if let Some(f) = &c.intensity {
                exists(&self.root, f, &format!("intensity trace of camera {}", c.id))?;
            }
        }
        if m.cameras.is_empty() {
            return Err(PipelineError::Manifest("no cameras".into()));
        }
        exists(&self.root, &m.markers, "marker file")?;
        exists(&self.root, &m.bodies, "body definition file")?;
        if let Some(p) = &m.mocap_counts {
            exists(&self.root, p, "marker-count trace")?;
        }
        if let Some(p) = &m.predictions {
            exists(&self.root, p, "prediction file")?;
        }
        let mut inds = BTreeSet::new();
        for i in &m.individuals {
            if !inds.insert(i.individual_id.as_str()) {
                return Err(PipelineError::Manifest(format!(
                    "individual {} listed twice",
                    i.individual_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Path of an artifact inside the output directory.
    pub fn out(&self, name: &str) -> PathBuf {
        self.resolve(&self.manifest.output_dir).join(name)
    }

    pub fn save(&self) -> Result<(), PipelineError> {
        let text = toml::to_string(&self.manifest).map_err(FormatError::from)?;
        atomic_write(&self.path, text.as_bytes())?;
        Ok(())
    }

    pub fn video_range(&self) -> std::ops::Range<i64> {
        self.manifest.video_frames[0]..self.manifest.video_frames[1]
    }

    pub fn camera_entry(&self, id: &str) -> Option<&CameraEntry> {
        self.manifest.cameras.iter().find(|c| c.id == id)
    }

    /// Cameras in manifest order; each file's `camera_id` must match its entry.
    pub fn cameras(&self) -> Result<Vec<NamedCamera>, PipelineError> {
        self.manifest
            .cameras
            .iter()
            .map(|c| {
                let cam = read_camera_file(&self.resolve(&c.calibration))?;
                if cam.id != c.id {
                    return Err(PipelineError::Manifest(format!(
                        "calibration file of camera {} names camera {}",
                        c.id, cam.id
                    )));
                }
                Ok(cam)
            })
            .collect()
    }

    /// The shared video→mo-cap clock. Every camera needs a clock and all must agree to within
    /// half a mo-cap frame over the annotated range.
    pub fn clock(&self) -> Result<ClockMap, PipelineError> {
        let mut clocks = self.manifest.cameras.iter().map(|c| {
            c.clock
                .ok_or_else(|| PipelineError::Missing(format!("camera {} has no clock; run sync first", c.id)))
        });
        let first = clocks.next().expect("at least one camera")?;
        let [a, b] = self.manifest.video_frames;
        for c in clocks {
            let c = c?;
            for f in [a, b - 1] {
                if (c.map_continuous(f as f64) - first.map_continuous(f as f64)).abs() > 0.5 {
                    return Err(PipelineError::Manifest(format!(
                        "camera clocks disagree by more than half a mo-cap frame at video frame {f}"
                    )));
                }
            }
        }
        Ok(first)
    }

    pub fn defs(&self) -> Result<Vec<RigidBodyDef>, PipelineError> {
        Ok(read_body_defs(&self.resolve(&self.manifest.bodies))?)
    }

    pub fn raw_markers(&self) -> Result<Vec<MarkerFrame>, PipelineError> {
        let p = self.resolve(&self.manifest.markers);
        Ok(read_marker_csv(&read_file(&p)?[..])?)
    }

    /// Manual keypoint clicks; a missing file means none yet.
    pub fn annotations(&self) -> Result<Vec<ManualAnnotation>, PipelineError> {
        let p = self.resolve(&self.manifest.annotations);
        if !p.exists() {
            return Ok(Vec::new());
        }
        Ok(serde_json::from_slice(&read_file(&p)?).map_err(FormatError::from)?)
    }

    pub fn calibration_clicks(&self) -> Result<Vec<ClickObservation>, PipelineError> {
        let p = self.resolve(&self.manifest.calibration_clicks);
        if !p.exists() {
            return Ok(Vec::new());
        }
        Ok(serde_json::from_slice(&read_file(&p)?).map_err(FormatError::from)?)
    }

    /// Path of the frame image for `camera` and `frame`, if present.
    pub fn frame_path(&self, camera: &str, frame: i64) -> Option<PathBuf> {
        let dir = self.resolve(self.camera_entry(camera)?.frames.as_ref()?);
        if frame < 0 {
            return None;
        }
        ["png", "jpg", "jpeg"]
            .iter()
            .map(|ext| dir.join(format!("{frame:06}.{ext}")))
            .find(|p| p.is_file())
    }
}
