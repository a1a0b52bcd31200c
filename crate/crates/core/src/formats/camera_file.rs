use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Distortion, Intrinsics, NamedCamera, RigidTransform};

use super::{atomic_write, read_file, FormatError};

/// One camera's calibration document (TOML). `extrinsic` is the row-major 4×4 world→camera
/// matrix in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub camera_id: String,
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    pub extrinsic: [[f64; 4]; 4],
}

impl CameraFile {
    pub fn from_camera(camera: &NamedCamera) -> Self {
        let i = &camera.model.intrinsics;
        let d = i.distortion;
        Self {
            camera_id: camera.id.clone(),
            image_size: [i.width, i.height],
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            k1: d.k1,
            k2: d.k2,
            k3: d.k3,
            p1: d.p1,
            p2: d.p2,
            extrinsic: camera.model.extrinsic.to_rows(),
        }
    }

    pub fn to_camera(&self) -> Result<NamedCamera, FormatError> {
        let intrinsics = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            distortion: Distortion {
                k1: self.k1,
                k2: self.k2,
                p1: self.p1,
                p2: self.p2,
                k3: self.k3,
            },
            width: self.image_size[0],
            height: self.image_size[1],
        };
        let invalid =
            |e: crate::geometry::GeometryError| FormatError::Invalid(format!("camera {}: {e}", self.camera_id));
        let extrinsic = RigidTransform::from_rows(&self.extrinsic).map_err(invalid)?;
        Ok(NamedCamera {
            id: self.camera_id.clone(),
            model: CameraModel::new(intrinsics, extrinsic).map_err(invalid)?,
        })
    }
}

pub fn read_camera_file(path: &Path) -> Result<NamedCamera, FormatError> {
    let text =
        String::from_utf8(read_file(path)?).map_err(|e| FormatError::Invalid(format!("{}: {e}", path.display())))?;
    let file: CameraFile = toml::from_str(&text)?;
    file.to_camera()
}

pub fn write_camera_file(path: &Path, camera: &NamedCamera) -> Result<(), FormatError> {
    let text = toml::to_string(&CameraFile::from_camera(camera))?;
    atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn round_trip_is_exact() {
        let intr = Intrinsics {
            fx: 2001.5,
            fy: 1999.25,
            cx: 1920.1,
            cy: 1080.3,
            distortion: Distortion::from_array([-0.1, 0.01, 1e-4, -2e-4, 0.003]),
            width: 3840,
            height: 2160,
        };
        let ext =
            RigidTransform::from_axis_angle(Vector3::new(0.3, -1.2, 0.7), Vector3::new(1.0 / 3.0, -2500.0, 4000.5));
        let cam = NamedCamera {
            id: "cam2".into(),
            model: CameraModel::new(intr, ext).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cam2.toml");
        write_camera_file(&p, &cam).unwrap();
        assert_eq!(read_camera_file(&p).unwrap(), cam);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("image_size = [3840, 2160]"), "{text}");
    }

    #[test]
    fn rejects_bad_documents() {
        let good = CameraFile::from_camera(&NamedCamera {
            id: "c".into(),
            model: CameraModel::new(
                Intrinsics {
                    fx: 1000.0,
                    fy: 1000.0,
                    cx: 500.0,
                    cy: 400.0,
                    distortion: Distortion::none(),
                    width: 1000,
                    height: 800,
                },
                RigidTransform::identity(),
            )
            .unwrap(),
        });
        let mut bad = good.clone();
        bad.extrinsic[0][0] = 2.0;
        assert!(bad.to_camera().is_err());
        let text = toml::to_string(&good).unwrap() + "extra = 1\n";
        assert!(toml::from_str::<CameraFile>(&text).is_err());
    }
}
