use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotate::KeypointId;
use crate::geometry::Point3;
use crate::mocap::BodyPart;

use super::QcError;

/// Angles in degrees between a part's plane normal and the world x, y and z axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseOrientation {
    pub part: BodyPart,
    pub angles: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquePoseCounts {
    pub head: usize,
    pub body: usize,
    pub combined: usize,
}

fn plane_points(part: BodyPart) -> [KeypointId; 3] {
    match part {
        BodyPart::Head => [KeypointId::Beak, KeypointId::LeftEye, KeypointId::RightEye],
        BodyPart::Backpack => [KeypointId::Tail, KeypointId::LeftShoulder, KeypointId::RightShoulder],
    }
}

/// Orientation of the head (beak, eyes) or body (tail, shoulders) plane from 3D keypoints.
pub fn pose_orientation(part: BodyPart, keypoints: &[(KeypointId, Point3)]) -> Result<PoseOrientation, QcError> {
    let get = |k: KeypointId| {
        keypoints
            .iter()
            .find(|(id, _)| *id == k)
            .map(|(_, p)| *p)
            .ok_or(QcError::MissingKeypoint(k))
    };
    let [o, l, r] = plane_points(part);
    let (o, l, r) = (get(o)?, get(l)?, get(r)?);
    let (a, b) = (l - o, r - o);
    let n = a.cross(&b);
    let norm = n.norm();
    if norm.partial_cmp(&(1e-9 * a.norm() * b.norm())) != Some(std::cmp::Ordering::Greater) {
        return Err(QcError::DegeneratePlane);
    }
    let n = n / norm;
    let angles = [n.x, n.y, n.z].map(|c| c.clamp(-1.0, 1.0).acos().to_degrees());
    Ok(PoseOrientation { part, angles })
}

fn bin(o: &PoseOrientation, bin_deg: f64) -> [i64; 3] {
    o.angles.map(|a| (a / bin_deg).floor() as i64)
}

/// Counts distinct head, body and co-occurring (head, body) orientations after flooring every
/// angle to `bin_deg` bins. Each sample is one individual in one frame.
pub fn count_unique_poses(
    samples: &[(Option<PoseOrientation>, Option<PoseOrientation>)],
    bin_deg: f64,
) -> Result<UniquePoseCounts, QcError> {
    if !(bin_deg.is_finite() && bin_deg > 0.0) {
        return Err(QcError::InvalidParameter(format!(
            "bin size must be positive, got {bin_deg}"
        )));
    }
    let mut head = BTreeSet::new();
    let mut body = BTreeSet::new();
    let mut combined = BTreeSet::new();
    for (h, b) in samples {
        let hb = h.as_ref().map(|h| bin(h, bin_deg));
        let bb = b.as_ref().map(|b| bin(b, bin_deg));
        if let Some(x) = hb {
            head.insert(x);
        }
        if let Some(x) = bb {
            body.insert(x);
        }
        if let (Some(x), Some(y)) = (hb, bb) {
            combined.insert((x, y));
        }
    }
    Ok(UniquePoseCounts {
        head: head.len(),
        body: body.len(),
        combined: combined.len(),
    })
}
