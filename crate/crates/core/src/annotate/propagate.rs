use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{NamedCamera, Pixel, Point3, RigidTransform};
use crate::mocap::{BodyPart, BodyTrack};
use crate::sync::ClockMap;

use super::bbox::{bounding_box, filter_training_crops, BBox, BBOX_MARGIN_PX};
use super::keypoints::{Individual, KeypointId, KeypointTemplate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewAnnotation {
    pub camera_id: String,
    /// One pixel per keypoint in [`KeypointId::ALL`] order.
    pub pixels: Vec<Pixel>,
    pub visible: Vec<bool>,
    pub bbox: Option<BBox>,
    /// False when another individual's box covers too much of this one.
    pub include_crop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualFrame {
    pub individual_id: String,
    pub valid: bool,
    /// World positions in [`KeypointId::ALL`] order; empty when invalid.
    pub keypoints3d: Vec<Point3>,
    /// Empty when invalid.
    pub views: Vec<ViewAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatedFrame {
    pub video_frame: i64,
    pub mocap_frame: i64,
    pub individuals: Vec<IndividualFrame>,
}

/// Everything needed to annotate one individual.
#[derive(Debug, Clone, Copy)]
pub struct IndividualInputs<'a> {
    pub individual: &'a Individual,
    pub template: &'a KeypointTemplate,
    pub head: &'a BodyTrack,
    pub backpack: &'a BodyTrack,
}

/// Applies the part poses to the template offsets and projects into every camera.
/// Missing poses or an incomplete template give an invalid entry.
pub fn propagate_frame(
    template: &KeypointTemplate,
    head_pose: Option<&RigidTransform>,
    backpack_pose: Option<&RigidTransform>,
    cameras: &[NamedCamera],
) -> IndividualFrame {
    let invalid = IndividualFrame {
        individual_id: template.individual_id.clone(),
        valid: false,
        keypoints3d: Vec::new(),
        views: Vec::new(),
    };
    let (Some(head), Some(backpack)) = (head_pose, backpack_pose) else {
        return invalid;
    };
    let mut keypoints3d = Vec::with_capacity(KeypointId::ALL.len());
    for k in KeypointId::ALL {
        let Some(offset) = template.offset(k) else {
            return invalid;
        };
        let pose = match k.part() {
            BodyPart::Head => head,
            BodyPart::Backpack => backpack,
        };
        keypoints3d.push(pose.apply(&offset));
    }
    let views = cameras
        .iter()
        .map(|cam| {
            let mut pixels = Vec::with_capacity(keypoints3d.len());
            let mut visible = Vec::with_capacity(keypoints3d.len());
            for p in &keypoints3d {
                match cam.model.project(p) {
                    Ok(proj) => {
                        pixels.push(proj.pixel);
                        visible.push(proj.visible);
                    }
                    Err(_) => {
                        pixels.push(Pixel::new(f64::NAN, f64::NAN));
                        visible.push(false);
                    }
                }
            }
            let shown: Vec<Pixel> = pixels
                .iter()
                .zip(&visible)
                .filter(|(_, v)| **v)
                .map(|(p, _)| *p)
                .collect();
            let k = &cam.model.intrinsics;
            ViewAnnotation {
                camera_id: cam.id.clone(),
                bbox: bounding_box(&shown, k.width, k.height, BBOX_MARGIN_PX),
                pixels,
                visible,
                include_crop: true,
            }
        })
        .collect();
    IndividualFrame {
        individual_id: template.individual_id.clone(),
        valid: true,
        keypoints3d,
        views,
    }
}

fn apply_crop_filter(individuals: &mut [IndividualFrame], n_cameras: usize) {
    for c in 0..n_cameras {
        let holders: Vec<(usize, BBox)> = individuals
            .iter()
            .enumerate()
            .filter_map(|(i, ind)| ind.views.get(c).and_then(|v| v.bbox).map(|b| (i, b)))
            .collect();
        let boxes: Vec<BBox> = holders.iter().map(|h| h.1).collect();
        for ((i, _), keep) in holders.iter().zip(filter_training_crops(&boxes)) {
            individuals[*i].views[c].include_crop = keep;
        }
    }
}

/// Annotates every video frame in `video_frames`. Frames are processed in parallel and
/// returned in frame order.
pub fn propagate_sequence(
    inputs: &[IndividualInputs<'_>],
    cameras: &[NamedCamera],
    clock: &ClockMap,
    video_frames: Range<i64>,
) -> Vec<AnnotatedFrame> {
    if inputs.is_empty() {
        return Vec::new();
    }
    video_frames
        .into_par_iter()
        .map(|v| {
            let m = clock.map_time(v);
            let mut individuals: Vec<IndividualFrame> = inputs
                .iter()
                .map(|inp| propagate_frame(inp.template, inp.head.pose_at(m), inp.backpack.pose_at(m), cameras))
                .collect();
            apply_crop_filter(&mut individuals, cameras.len());
            AnnotatedFrame {
                video_frame: v,
                mocap_frame: m,
                individuals,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::KeypointEntry;
    use crate::geometry::{CameraModel, Distortion, Intrinsics};
    use nalgebra::{Matrix4, Vector3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn template() -> KeypointTemplate {
        let keypoints: BTreeMap<_, _> = KeypointId::ALL
            .iter()
            .enumerate()
            .map(|(i, k)| {
                (
                    *k,
                    KeypointEntry {
                        offset: [10.0 * i as f64, 5.0 - i as f64, 2.0 * i as f64],
                        n: 3,
                        spread: Some([0.1; 3]),
                    },
                )
            })
            .collect();
        KeypointTemplate {
            individual_id: "p".into(),
            keypoints,
        }
    }

    fn camera() -> NamedCamera {
        let k = Intrinsics {
            fx: 2000.0,
            fy: 2000.0,
            cx: 1920.0,
            cy: 1080.0,
            distortion: Distortion::none(),
            width: 3840,
            height: 2160,
        };
        NamedCamera {
            id: "c0".into(),
            model: CameraModel::new(k, RigidTransform::from_translation(Vector3::new(0.0, 0.0, 3000.0))).unwrap(),
        }
    }

    #[test]
    fn identity_poses_give_offsets() {
        let t = template();
        let id = RigidTransform::identity();
        let f = propagate_frame(&t, Some(&id), Some(&id), &[camera()]);
        assert!(f.valid);
        for (k, p) in KeypointId::ALL.iter().zip(&f.keypoints3d) {
            assert_eq!(*p, t.offset(*k).unwrap());
        }
    }

    #[test]
    fn translation_shifts_every_keypoint() {
        let t = template();
        let shift = Vector3::new(12.0, -7.0, 3.5);
        let tr = RigidTransform::from_translation(shift);
        let f = propagate_frame(&t, Some(&tr), Some(&tr), &[]);
        for (k, p) in KeypointId::ALL.iter().zip(&f.keypoints3d) {
            assert!((p - (t.offset(*k).unwrap() + shift)).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_homogeneous_matrix_oracle() {
        let t = template();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut pose = || {
                RigidTransform::from_axis_angle(
                    Vector3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    ),
                    Vector3::new(
                        rng.random_range(-500.0..500.0),
                        rng.random_range(-500.0..500.0),
                        rng.random_range(-50.0..50.0),
                    ),
                )
            };
            let (h, b) = (pose(), pose());
            let f = propagate_frame(&t, Some(&h), Some(&b), &[]);
            for (k, p) in KeypointId::ALL.iter().zip(&f.keypoints3d) {
                let m: Matrix4<f64> = if k.part() == BodyPart::Head {
                    h.to_matrix()
                } else {
                    b.to_matrix()
                };
                let o = t.offset(*k).unwrap();
                let r = m * Vector4::new(o.x, o.y, o.z, 1.0);
                assert!((p.coords - r.xyz()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_pose_is_invalid() {
        let id = RigidTransform::identity();
        let f = propagate_frame(&template(), None, Some(&id), &[camera()]);
        assert!(!f.valid && f.keypoints3d.is_empty() && f.views.is_empty());
    }

    #[test]
    fn empty_input_set() {
        let out = propagate_sequence(&[], &[camera()], &ClockMap::nominal(0.0), 0..100);
        assert!(out.is_empty());
    }

    #[test]
    fn pixels_are_projections_and_box_contains_visible() {
        let t = template();
        let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 100.0));
        let cam = camera();
        let f = propagate_frame(&t, Some(&pose), Some(&pose), std::slice::from_ref(&cam));
        let v = &f.views[0];
        for (p3, px) in f.keypoints3d.iter().zip(&v.pixels) {
            assert_eq!(cam.model.project(p3).unwrap().pixel, *px);
        }
        let b = v.bbox.unwrap();
        assert!(v
            .pixels
            .iter()
            .zip(&v.visible)
            .filter(|x| *x.1)
            .all(|(p, _)| b.contains(p)));
    }
}
