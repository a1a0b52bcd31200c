use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::geometry::RigidTransform;
use crate::mocap::{BodyTrack, PoseSample};

use super::FormatError;

const HEADER: [&str; 16] = [
    "frame", "body_id", "valid", "residual", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "tx", "ty",
    "tz",
];

/// Pose tracks as CSV: `frame,body_id,valid,residual,r11..r33,tx,ty,tz`. Frames without a
/// pose leave the pose and residual fields empty.
pub fn write_tracks_csv<W: Write>(writer: W, tracks: &[BodyTrack]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for t in tracks {
        for s in &t.samples {
            let mut rec = vec![
                s.frame_index.to_string(),
                t.body_id.clone(),
                u8::from(s.valid).to_string(),
            ];
            rec.push(s.residual_mm.map(|r| r.to_string()).unwrap_or_default());
            match s.pose {
                Some(p) => rec.extend(p.to_flat12().iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), 12)),
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<Option<T>, FormatError> {
    let s = rec.get(i).unwrap_or("").trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        FormatError::Invalid(format!(
            "tracks line {line}: cannot parse {:?} in column {}",
            s, HEADER[i]
        ))
    })
}

/// Reads tracks back; bodies appear in order of first appearance, samples sorted by frame.
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<BodyTrack>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(HEADER) {
        return Err(FormatError::Invalid(format!("expected header {}", HEADER.join(","))));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_body: BTreeMap<String, Vec<PoseSample>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let frame: i64 =
            field(&rec, 0, line)?.ok_or_else(|| FormatError::Invalid(format!("tracks line {line}: missing frame")))?;
        let body = rec.get(1).unwrap_or("").to_string();
        let valid = match rec.get(2) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(FormatError::Invalid(format!(
                    "tracks line {line}: valid must be 0 or 1, got {other:?}"
                )))
            }
        };
        let residual: Option<f64> = field(&rec, 3, line)?;
        let values: Vec<Option<f64>> = (4..16).map(|i| field(&rec, i, line)).collect::<Result<_, _>>()?;
        let pose = if values.iter().all(Option::is_some) {
            let flat: [f64; 12] = std::array::from_fn(|i| values[i].unwrap_or_default());
            Some(
                RigidTransform::from_flat12(&flat)
                    .map_err(|e| FormatError::Invalid(format!("tracks line {line}: {e}")))?,
            )
        } else if values.iter().all(Option::is_none) {
            None
        } else {
            return Err(FormatError::Invalid(format!("tracks line {line}: partial pose")));
        };
        if valid && pose.is_none() {
            return Err(FormatError::Invalid(format!(
                "tracks line {line}: valid sample without a pose"
            )));
        }
        if !by_body.contains_key(&body) {
            order.push(body.clone());
        }
        by_body.entry(body).or_default().push(PoseSample {
            frame_index: frame,
            pose,
            residual_mm: residual,
            valid,
        });
    }
    Ok(order
        .into_iter()
        .map(|body_id| {
            let mut samples = by_body.remove(&body_id).unwrap_or_default();
            samples.sort_by_key(|s| s.frame_index);
            BodyTrack { body_id, samples }
        })
        .collect())
}
