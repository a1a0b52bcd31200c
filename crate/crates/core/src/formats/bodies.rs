use std::path::Path;

use crate::mocap::RigidBodyDef;

use super::{atomic_write, read_file, FormatError};

/// Rigid body definitions as a JSON array of
/// `{body_id, part, individual_id, marker_ids: [4], template: [[x,y,z]; 4]}`.
pub fn read_body_defs(path: &Path) -> Result<Vec<RigidBodyDef>, FormatError> {
    let defs: Vec<RigidBodyDef> = serde_json::from_slice(&read_file(path)?)?;
    let mut ids: Vec<&str> = defs.iter().map(|d| d.body_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(FormatError::Invalid(format!("duplicate body_id {}", w[0])));
    }
    Ok(defs)
}

pub fn write_body_defs(path: &Path, defs: &[RigidBodyDef]) -> Result<(), FormatError> {
    atomic_write(path, &serde_json::to_vec_pretty(defs)?)
}
