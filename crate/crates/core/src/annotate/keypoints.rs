use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pixel, Point3};
use crate::mocap::BodyPart;

use super::AnnotationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointId {
    Beak,
    Nose,
    LeftEye,
    RightEye,
    LeftShoulder,
    RightShoulder,
    TopKeel,
    BottomKeel,
    Tail,
}

impl KeypointId {
    pub const ALL: [KeypointId; 9] = [
        KeypointId::Beak,
        KeypointId::Nose,
        KeypointId::LeftEye,
        KeypointId::RightEye,
        KeypointId::LeftShoulder,
        KeypointId::RightShoulder,
        KeypointId::TopKeel,
        KeypointId::BottomKeel,
        KeypointId::Tail,
    ];

    pub fn part(self) -> BodyPart {
        match self {
            KeypointId::Beak | KeypointId::Nose | KeypointId::LeftEye | KeypointId::RightEye => BodyPart::Head,
            _ => BodyPart::Backpack,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeypointId::Beak => "beak",
            KeypointId::Nose => "nose",
            KeypointId::LeftEye => "left_eye",
            KeypointId::RightEye => "right_eye",
            KeypointId::LeftShoulder => "left_shoulder",
            KeypointId::RightShoulder => "right_shoulder",
            KeypointId::TopKeel => "top_keel",
            KeypointId::BottomKeel => "bottom_keel",
            KeypointId::Tail => "tail",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("listed")
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeypointId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        KeypointId::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown keypoint {s:?}"))
    }
}

/// One individual of the roster and the rigid bodies carrying its head and backpack markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Individual {
    pub individual_id: String,
    pub head_body: String,
    pub backpack_body: String,
}

impl Individual {
    pub fn body_for(&self, part: BodyPart) -> &str {
        match part {
            BodyPart::Head => &self.head_body,
            BodyPart::Backpack => &self.backpack_body,
        }
    }
}

/// A human click on one keypoint in one view and frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualAnnotation {
    pub individual_id: String,
    pub camera_id: String,
    pub video_frame: i64,
    pub keypoint: KeypointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default)]
    pub occluded: bool,
}

impl ManualAnnotation {
    pub fn visible(
        individual_id: impl Into<String>,
        camera_id: impl Into<String>,
        video_frame: i64,
        keypoint: KeypointId,
        pixel: Pixel,
    ) -> Self {
        Self {
            individual_id: individual_id.into(),
            camera_id: camera_id.into(),
            video_frame,
            keypoint,
            u: Some(pixel.x),
            v: Some(pixel.y),
            occluded: false,
        }
    }

    pub fn pixel(&self) -> Option<Pixel> {
        match (self.occluded, self.u, self.v) {
            (false, Some(u), Some(v)) => Some(Pixel::new(u, v)),
            _ => None,
        }
    }

    fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.individual_id, self.camera_id, self.video_frame, self.keypoint
        )
    }
}

/// Checks the click-set invariants: one click per (individual, camera, frame, keypoint),
/// occluded clicks without a pixel, visible clicks with a finite pixel.
pub fn validate_annotations(annotations: &[ManualAnnotation]) -> Result<(), AnnotationError> {
    let mut seen = HashSet::new();
    for a in annotations {
        let key = a.key();
        let consistent = match (a.occluded, a.u, a.v) {
            (true, None, None) => true,
            (false, Some(u), Some(v)) => u.is_finite() && v.is_finite(),
            _ => false,
        };
        if !consistent {
            return Err(AnnotationError::InconsistentClick(key));
        }
        if !seen.insert(key.clone()) {
            return Err(AnnotationError::DuplicateAnnotation(key));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointEntry {
    /// Position in the keypoint's body-part local frame, mm.
    pub offset: [f64; 3],
    /// Number of frames averaged.
    pub n: usize,
    /// Per-axis sample standard deviation, mm; absent with a single sample.
    pub spread: Option<[f64; 3]>,
}

impl KeypointEntry {
    pub fn offset_point(&self) -> Point3 {
        Point3::new(self.offset[0], self.offset[1], self.offset[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointTemplate {
    pub individual_id: String,
    pub keypoints: BTreeMap<KeypointId, KeypointEntry>,
}

impl KeypointTemplate {
    /// Usable for propagation when every keypoint has at least one sample.
    pub fn is_complete(&self) -> bool {
        KeypointId::ALL
            .iter()
            .all(|k| self.keypoints.get(k).is_some_and(|e| e.n >= 1))
    }

    pub fn offset(&self, k: KeypointId) -> Option<Point3> {
        self.keypoints.get(&k).map(KeypointEntry::offset_point)
    }
}
