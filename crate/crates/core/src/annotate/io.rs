use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::formats::FormatError;

use super::keypoints::KeypointId;
use super::propagate::AnnotatedFrame;

/// Row of a per-camera 2D annotation file: `frame,individual,keypoint,u,v,visible`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2dRow {
    pub frame: i64,
    pub individual: String,
    pub keypoint: KeypointId,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub visible: u8,
}

/// Row of the 3D annotation file: `frame,individual,keypoint,x,y,z,valid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint3dRow {
    pub frame: i64,
    pub individual: String,
    pub keypoint: KeypointId,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub valid: u8,
}

/// Row of the box file: `frame,individual,camera,x_min,y_min,x_max,y_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub frame: i64,
    pub individual: String,
    pub camera: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Writes the 2D annotations of camera `camera_index` (position in the propagation camera list).
pub fn write_keypoints2d_csv<W: Write>(
    writer: W,
    frames: &[AnnotatedFrame],
    camera_index: usize,
) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["frame", "individual", "keypoint", "u", "v", "visible"])?;
    for f in frames {
        for ind in &f.individuals {
            for (i, k) in KeypointId::ALL.iter().enumerate() {
                let (u, v, visible) = match ind.views.get(camera_index) {
                    Some(view) => (finite(view.pixels[i].x), finite(view.pixels[i].y), view.visible[i]),
                    None => (None, None, false),
                };
                w.serialize(Keypoint2dRow {
                    frame: f.video_frame,
                    individual: ind.individual_id.clone(),
                    keypoint: *k,
                    u,
                    v,
                    visible: u8::from(visible),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_keypoints3d_csv<W: Write>(writer: W, frames: &[AnnotatedFrame]) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["frame", "individual", "keypoint", "x", "y", "z", "valid"])?;
    for f in frames {
        for ind in &f.individuals {
            for (i, k) in KeypointId::ALL.iter().enumerate() {
                let p = ind.keypoints3d.get(i);
                w.serialize(Keypoint3dRow {
                    frame: f.video_frame,
                    individual: ind.individual_id.clone(),
                    keypoint: *k,
                    x: p.map(|p| p.x),
                    y: p.map(|p| p.y),
                    z: p.map(|p| p.z),
                    valid: u8::from(ind.valid),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_boxes_csv<W: Write>(writer: W, frames: &[AnnotatedFrame]) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["frame", "individual", "camera", "x_min", "y_min", "x_max", "y_max"])?;
    for f in frames {
        for ind in &f.individuals {
            for view in &ind.views {
                if let Some(b) = view.bbox {
                    w.serialize(BoxRow {
                        frame: f.video_frame,
                        individual: ind.individual_id.clone(),
                        camera: view.camera_id.clone(),
                        x_min: b.x_min,
                        y_min: b.y_min,
                        x_max: b.x_max,
                        y_max: b.y_max,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R, header: &[&str]) -> Result<Vec<T>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(FormatError::Invalid(format!("expected header {}", header.join(","))));
    }
    rdr.deserialize().collect::<Result<_, _>>().map_err(FormatError::from)
}

pub fn read_keypoints2d_csv<R: Read>(reader: R) -> Result<Vec<Keypoint2dRow>, FormatError> {
    read_rows(reader, &["frame", "individual", "keypoint", "u", "v", "visible"])
}

pub fn read_keypoints3d_csv<R: Read>(reader: R) -> Result<Vec<Keypoint3dRow>, FormatError> {
    read_rows(reader, &["frame", "individual", "keypoint", "x", "y", "z", "valid"])
}

pub fn read_boxes_csv<R: Read>(reader: R) -> Result<Vec<BoxRow>, FormatError> {
    read_rows(
        reader,
        &["frame", "individual", "camera", "x_min", "y_min", "x_max", "y_max"],
    )
}
