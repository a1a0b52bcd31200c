use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::formats::FormatError;
use crate::geometry::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub id: String,
    /// `None` when the marker was not reconstructed in this frame.
    pub position: Option<Point3>,
}

impl Marker {
    pub fn valid(id: impl Into<String>, p: Point3) -> Self {
        Self {
            id: id.into(),
            position: Some(p),
        }
    }

    pub fn missing(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            position: None,
        }
    }
}

/// One 100 Hz mo-cap sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub frame_index: i64,
    pub markers: Vec<Marker>,
}

impl MarkerFrame {
    pub fn new(frame_index: i64, markers: Vec<Marker>) -> Self {
        Self { frame_index, markers }
    }

    pub fn position(&self, id: &str) -> Option<Point3> {
        self.markers.iter().find(|m| m.id == id).and_then(|m| m.position)
    }

    pub fn valid_markers(&self) -> impl Iterator<Item = (&str, Point3)> {
        self.markers
            .iter()
            .filter_map(|m| m.position.map(|p| (m.id.as_str(), p)))
    }

    /// Sets (or inserts) the position of marker `id`.
    pub fn set_position(&mut self, id: &str, position: Option<Point3>) {
        match self.markers.iter_mut().find(|m| m.id == id) {
            Some(m) => m.position = position,
            None => self.markers.push(Marker {
                id: id.to_string(),
                position,
            }),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkerRow {
    frame: i64,
    marker_id: String,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    valid: u8,
}

/// Reads `frame,marker_id,x,y,z,valid` rows; frames must appear in increasing order.
pub fn read_marker_csv<R: Read>(reader: R) -> Result<Vec<MarkerFrame>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["frame", "marker_id", "x", "y", "z", "valid"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(FormatError::Invalid(format!(
            "marker csv header must be {}",
            expected.join(",")
        )));
    }
    let mut frames: Vec<MarkerFrame> = Vec::new();
    for row in rdr.deserialize() {
        let row: MarkerRow = row?;
        let position = match (row.valid, row.x, row.y, row.z) {
            (0, ..) => None,
            (1, Some(x), Some(y), Some(z)) if x.is_finite() && y.is_finite() && z.is_finite() => {
                Some(Point3::new(x, y, z))
            }
            _ => {
                return Err(FormatError::Invalid(format!(
                    "frame {} marker {}: valid markers need finite x,y,z",
                    row.frame, row.marker_id
                )))
            }
        };
        match frames.last_mut() {
            Some(last) if last.frame_index == row.frame => last.markers.push(Marker {
                id: row.marker_id,
                position,
            }),
            Some(last) if last.frame_index > row.frame => {
                return Err(FormatError::Invalid(format!(
                    "frame indices must increase (saw {} after {})",
                    row.frame, last.frame_index
                )))
            }
            _ => frames.push(MarkerFrame::new(
                row.frame,
                vec![Marker {
                    id: row.marker_id,
                    position,
                }],
            )),
        }
    }
    Ok(frames)
}

pub fn write_marker_csv<W: Write>(writer: W, frames: &[MarkerFrame]) -> Result<(), FormatError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for f in frames {
        for m in &f.markers {
            let (x, y, z) = match m.position {
                Some(p) => (Some(p.x), Some(p.y), Some(p.z)),
                None => (None, None, None),
            };
            wtr.serialize(MarkerRow {
                frame: f.frame_index,
                marker_id: m.id.clone(),
                x,
                y,
                z,
                valid: u8::from(m.position.is_some()),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}
