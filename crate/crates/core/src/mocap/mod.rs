//! Marker trajectories → per-frame rigid body poses with stable identities.

mod identify;
mod markers;
mod repair;
mod track;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point3};

pub use identify::{identify_individuals, ClusterAssignment, IdentifyConfig};
pub use markers::{read_marker_csv, write_marker_csv, Marker, MarkerFrame};
pub use repair::{repair_labels, Permutation, RepairAction, RepairConfig, RepairEntry, RepairLog};
pub use track::{fit_body_pose, track_sequence, BodyTrack, PoseFit, PoseSample, TrackConfig};

/// Default minimum gap between any two template distances of a backpack pattern.
pub const DEFAULT_SEPARATION_MARGIN_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Head,
    Backpack,
}

impl BodyPart {
    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::Head => "head",
            BodyPart::Backpack => "backpack",
        }
    }
}

/// A tracked rigid body: four markers with a fixed layout in the body's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBodyDef", into = "RawBodyDef")]
pub struct RigidBodyDef {
    pub body_id: String,
    pub part: BodyPart,
    pub individual_id: String,
    /// Mo-cap labels of the four markers, in template order.
    pub marker_ids: [String; 4],
    /// Marker positions in the local frame, millimeters.
    pub template: [Point3; 4],
}

#[derive(Serialize, Deserialize)]
struct RawBodyDef {
    body_id: String,
    part: BodyPart,
    individual_id: String,
    marker_ids: [String; 4],
    template: [[f64; 3]; 4],
}

impl TryFrom<RawBodyDef> for RigidBodyDef {
    type Error = MocapError;

    fn try_from(raw: RawBodyDef) -> Result<Self, MocapError> {
        RigidBodyDef::new(
            raw.body_id,
            raw.part,
            raw.individual_id,
            raw.marker_ids,
            raw.template.map(|p| Point3::new(p[0], p[1], p[2])),
        )
    }
}

impl From<RigidBodyDef> for RawBodyDef {
    fn from(d: RigidBodyDef) -> Self {
        RawBodyDef {
            body_id: d.body_id,
            part: d.part,
            individual_id: d.individual_id,
            marker_ids: d.marker_ids,
            template: d.template.map(|p| [p.x, p.y, p.z]),
        }
    }
}

impl RigidBodyDef {
    pub fn new(
        body_id: impl Into<String>,
        part: BodyPart,
        individual_id: impl Into<String>,
        marker_ids: [String; 4],
        template: [Point3; 4],
    ) -> Result<Self, MocapError> {
        Self::with_margin(
            body_id,
            part,
            individual_id,
            marker_ids,
            template,
            DEFAULT_SEPARATION_MARGIN_MM,
        )
    }

    pub fn with_margin(
        body_id: impl Into<String>,
        part: BodyPart,
        individual_id: impl Into<String>,
        marker_ids: [String; 4],
        template: [Point3; 4],
        separation_margin: f64,
    ) -> Result<Self, MocapError> {
        let def = RigidBodyDef {
            body_id: body_id.into(),
            part,
            individual_id: individual_id.into(),
            marker_ids,
            template,
        };
        if !def.template.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(MocapError::InvalidDefinition(format!(
                "{}: non-finite template marker",
                def.body_id
            )));
        }
        let mut ids = def.marker_ids.to_vec();
        ids.sort();
        ids.dedup();
        if ids.len() != 4 {
            return Err(MocapError::InvalidDefinition(format!(
                "{}: marker ids must be distinct",
                def.body_id
            )));
        }
        crate::geometry::rigid_fit(&def.template, &def.template)
            .map_err(|_| MocapError::InvalidDefinition(format!("{}: template markers are collinear", def.body_id)))?;
        if part == BodyPart::Backpack {
            let mut d = def.sorted_distances().to_vec();
            d.sort_by(f64::total_cmp);
            if let Some(w) = d.windows(2).find(|w| w[1] - w[0] < separation_margin) {
                return Err(MocapError::InvalidDefinition(format!(
                    "{}: backpack distances {:.2} and {:.2} closer than {separation_margin} mm",
                    def.body_id, w[0], w[1]
                )));
            }
        }
        Ok(def)
    }

    /// Template distance between markers `i` and `j`.
    pub fn template_distance(&self, i: usize, j: usize) -> f64 {
        (self.template[i] - self.template[j]).norm()
    }

    /// The six pairwise template distances, ascending.
    pub fn sorted_distances(&self) -> [f64; 6] {
        sorted_pairwise(&self.template)
    }
}

/// Index pairs of the six edges between four markers.
pub(crate) const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub(crate) fn sorted_pairwise(p: &[Point3; 4]) -> [f64; 6] {
    let mut d = PAIRS.map(|(i, j)| (p[i] - p[j]).norm());
    d.sort_by(f64::total_cmp);
    d
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MocapError {
    #[error("only {found} of the required 3 markers are valid")]
    InsufficientMarkers { found: usize },
    #[error("cluster {markers:?} matches {bodies:?} within the ambiguity margin")]
    AmbiguousIdentity { markers: Vec<String>, bodies: Vec<String> },
    #[error("frame {frame}: no label permutation restores the template distances")]
    Unrepairable { frame: i64 },
    #[error("invalid rigid body definition: {0}")]
    InvalidDefinition(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl MocapError {
    pub fn code(&self) -> &'static str {
        match self {
            MocapError::InsufficientMarkers { .. } => "InsufficientMarkers",
            MocapError::AmbiguousIdentity { .. } => "AmbiguousIdentity",
            MocapError::Unrepairable { .. } => "Unrepairable",
            MocapError::InvalidDefinition(_) => "InvalidDefinition",
            MocapError::Geometry(g) => g.code(),
        }
    }
}
