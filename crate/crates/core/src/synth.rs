//! Synthetic recording sessions with known ground truth: a 4-camera rig, birds carrying head
//! and backpack marker patterns, a calibration wand, flash traces, clicks and detector output.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::ops::Range;

use image::{GrayImage, Luma};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotate::{Individual, KeypointEntry, KeypointId, KeypointTemplate, ManualAnnotation};
use crate::calibration::{CalibrationClick, ClickObservation};
use crate::geometry::{CameraModel, Distortion, Intrinsics, NamedCamera, Pixel, Point3, RigidTransform};
use crate::mocap::{BodyPart, BodyTrack, Marker, MarkerFrame, PoseSample, RigidBodyDef};
use crate::qc::{InstanceKey, PredictionRecord};
use crate::sync::{generate_flash_traces, ClockMap, FlashTraces, FlashTrainSpec};

/// Arena footprint (mm); cameras stand at its corners.
pub const ARENA_MM: [f64; 2] = [3600.0, 4200.0];
pub const CAMERA_HEIGHT_MM: f64 = 2400.0;
pub const WAND_SPACING_MM: f64 = 200.0;
pub const WAND_MARKERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub individuals: usize,
    pub first_video_frame: i64,
    pub video_frames: usize,
    /// Mo-cap frame of video frame 0.
    pub offset_mocap_frames: f64,
    pub marker_noise_mm: f64,
    /// Frames with manual keypoint clicks, spread evenly over the sequence.
    pub annotated_frames: usize,
    pub click_noise_px: f64,
    /// Video frames with calibration-wand clicks.
    pub wand_frames: usize,
    pub wand_click_noise_px: f64,
    pub prediction_noise_px: f64,
    /// Fraction of (frame, individual, camera) instances whose head predictions are corrupted.
    pub corrupt_fraction: f64,
    /// Number of leading video frames rendered as images.
    pub rendered_frames: usize,
    pub flash_duration_s: f64,
    pub distortion: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            individuals: 2,
            first_video_frame: 0,
            video_frames: 1000,
            offset_mocap_frames: 137.0,
            marker_noise_mm: 0.0,
            annotated_frames: 5,
            click_noise_px: 0.0,
            wand_frames: 6,
            wand_click_noise_px: 0.0,
            prediction_noise_px: 0.0,
            corrupt_fraction: 0.0,
            rendered_frames: 2,
            flash_duration_s: 120.0,
            distortion: true,
        }
    }
}

/// Motion parameters of one bird.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Gait {
    center: Point3,
    radius: f64,
    omega: f64,
    phase: f64,
    peck_period: f64,
    scan_phase: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cameras: Vec<NamedCamera>,
    pub individuals: Vec<Individual>,
    pub defs: Vec<RigidBodyDef>,
    /// Ground-truth keypoint offsets (n = 0, no spread).
    pub templates: Vec<KeypointTemplate>,
    pub clock: ClockMap,
    pub marker_frames: Vec<MarkerFrame>,
    /// Ground-truth poses per body, every mo-cap frame valid.
    pub true_tracks: Vec<BodyTrack>,
    pub annotations: Vec<ManualAnnotation>,
    pub calibration_clicks: Vec<ClickObservation>,
    pub flash: FlashTraces,
    pub predictions: Vec<PredictionRecord>,
    pub corrupted: Vec<InstanceKey>,
    gaits: Vec<Gait>,
}

/// Four cameras at the arena corners looking at its center on the floor.
pub fn standard_rig(distortion: bool) -> Vec<NamedCamera> {
    let target = Point3::new(ARENA_MM[0] / 2.0, ARENA_MM[1] / 2.0, 0.0);
    let corners = [
        (0.0, 0.0),
        (ARENA_MM[0], 0.0),
        (ARENA_MM[0], ARENA_MM[1]),
        (0.0, ARENA_MM[1]),
    ];
    corners
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let eye = Point3::new(x, y, CAMERA_HEIGHT_MM);
            let extrinsic = RigidTransform::look_at(&eye, &target, &Vector3::z()).expect("camera is above the floor");
            let d = if distortion {
                Distortion::from_array([-0.02 - 0.005 * i as f64, 0.004, 1e-4, -1e-4, 0.0])
            } else {
                Distortion::none()
            };
            let intrinsics = Intrinsics {
                fx: 2000.0,
                fy: 2000.0,
                cx: 1920.0 + 3.0 * i as f64,
                cy: 1080.0 - 2.0 * i as f64,
                distortion: d,
                width: 3840,
                height: 2160,
            };
            NamedCamera {
                id: format!("cam{i}"),
                model: CameraModel::new(intrinsics, extrinsic).expect("valid intrinsics"),
            }
        })
        .collect()
}

fn pattern_distance(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Random 4-marker pattern with well separated, distinct pairwise distances that differs
/// from every pattern in `taken`.
fn random_pattern(rng: &mut ChaCha8Rng, taken: &[[f64; 6]]) -> [Point3; 4] {
    loop {
        let pts: [Point3; 4] = std::array::from_fn(|_| {
            Point3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(5.0..40.0),
            )
        });
        let mut d = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].map(|(i, j)| (pts[i] - pts[j]).norm());
        d.sort_by(f64::total_cmp);
        if d[0] < 25.0 || d.windows(2).any(|w| w[1] - w[0] < 7.0) {
            continue;
        }
        if taken.iter().any(|t| pattern_distance(t, &d) < 20.0) {
            continue;
        }
        // reject near-coplanar patterns so three-marker fits stay well conditioned
        let n = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
        if (n.dot(&(pts[3] - pts[0])) / n.norm()).abs() < 8.0 {
            continue;
        }
        return pts;
    }
}

fn base_offsets(k: KeypointId) -> Vector3<f64> {
    match k {
        KeypointId::Beak => Vector3::new(38.0, 0.0, -8.0),
        KeypointId::Nose => Vector3::new(24.0, 0.0, -1.0),
        KeypointId::LeftEye => Vector3::new(9.0, 11.0, 3.0),
        KeypointId::RightEye => Vector3::new(9.0, -11.0, 3.0),
        KeypointId::LeftShoulder => Vector3::new(25.0, 28.0, -28.0),
        KeypointId::RightShoulder => Vector3::new(25.0, -28.0, -28.0),
        KeypointId::TopKeel => Vector3::new(48.0, 0.0, -48.0),
        KeypointId::BottomKeel => Vector3::new(0.0, 0.0, -78.0),
        KeypointId::Tail => Vector3::new(-95.0, 0.0, -32.0),
    }
}

fn rot(axis: Vector3<f64>, angle: f64) -> RigidTransform {
    RigidTransform::from_axis_angle(axis * angle, Vector3::zeros())
}

impl Gait {
    fn backpack(&self, t: f64) -> RigidTransform {
        let a = self.phase + self.omega * t;
        let pos = self.center
            + Vector3::new(
                self.radius * a.cos(),
                self.radius * a.sin(),
                120.0 + 8.0 * (3.0 * t).sin(),
            );
        let heading = a + self.omega.signum() * PI / 2.0;
        let sway = 0.08 * (2.0 * PI * 1.5 * t).sin();
        let pitch = 0.1 + 0.05 * (2.0 * PI * 0.7 * t + self.phase).sin();
        let r = rot(Vector3::z(), heading)
            .compose(&rot(Vector3::y(), -pitch))
            .compose(&rot(Vector3::x(), sway));
        RigidTransform::from_translation(pos.coords).compose(&r)
    }

    fn head(&self, t: f64) -> RigidTransform {
        let cycle = (t / self.peck_period).fract();
        // quick downward strike then recovery
        let peck = if cycle < 0.25 {
            (cycle / 0.25 * PI).sin().powi(2)
        } else {
            0.0
        };
        let bob = 12.0 * (2.0 * PI * 2.0 * t).sin();
        let neck = Vector3::new(70.0 + bob + 25.0 * peck, 0.0, 75.0 - 60.0 * peck);
        let scan = 0.6 * (0.9 * t + self.scan_phase).sin();
        let tilt = 0.15 * (1.3 * t).sin();
        let r = rot(Vector3::z(), scan)
            .compose(&rot(Vector3::y(), 1.0 * peck))
            .compose(&rot(Vector3::x(), tilt));
        self.backpack(t)
            .compose(&RigidTransform::from_translation(neck))
            .compose(&r)
    }
}

impl SyntheticScene {
    pub fn video_range(&self) -> Range<i64> {
        self.spec.first_video_frame..self.spec.first_video_frame + self.spec.video_frames as i64
    }

    pub fn camera(&self, id: &str) -> Option<&NamedCamera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    /// True part pose at a mo-cap frame.
    pub fn true_pose(&self, individual: usize, part: BodyPart, mocap_frame: i64) -> RigidTransform {
        let t = mocap_frame as f64 / 100.0;
        match part {
            BodyPart::Head => self.gaits[individual].head(t),
            BodyPart::Backpack => self.gaits[individual].backpack(t),
        }
    }

    /// Ground-truth world keypoints of an individual at a video frame, in [`KeypointId::ALL`] order.
    pub fn true_keypoints(&self, individual: usize, video_frame: i64) -> [Point3; 9] {
        let m = self.clock.map_time(video_frame);
        let tpl = &self.templates[individual];
        KeypointId::ALL.map(|k| {
            let offset = tpl.offset(k).expect("complete template");
            self.true_pose(individual, k.part(), m).apply(&offset)
        })
    }

    /// Ground-truth pixel and in-image flag of every keypoint in one view.
    pub fn true_pixels(&self, individual: usize, camera: usize, video_frame: i64) -> [(Pixel, bool); 9] {
        let model = &self.cameras[camera].model;
        self.true_keypoints(individual, video_frame)
            .map(|p| match model.project(&p) {
                Ok(pr) => (pr.pixel, pr.visible),
                Err(_) => (Pixel::new(f64::NAN, f64::NAN), false),
            })
    }

    fn wand_markers(&self, mocap_frame: i64) -> [Point3; WAND_MARKERS] {
        wand_markers(mocap_frame)
    }

    /// Grayscale frame with a dot at every visible keypoint and wand marker.
    pub fn render_frame(&self, camera: usize, video_frame: i64) -> GrayImage {
        let model = &self.cameras[camera].model;
        let mut img = GrayImage::from_pixel(model.intrinsics.width, model.intrinsics.height, Luma([30]));
        let mut dot = |p: Pixel, v: u8| {
            let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
            for dy in -5..=5i64 {
                for dx in -5..=5i64 {
                    let (x, y) = (cx + dx, cy + dy);
                    if dx * dx + dy * dy <= 25
                        && x >= 0
                        && y >= 0
                        && (x as u32) < img.width()
                        && (y as u32) < img.height()
                    {
                        img.put_pixel(x as u32, y as u32, Luma([v]));
                    }
                }
            }
        };
        for i in 0..self.individuals.len() {
            for (k, (px, vis)) in self.true_pixels(i, camera, video_frame).iter().enumerate() {
                if *vis {
                    dot(*px, if k < 4 { 230 } else { 170 });
                }
            }
        }
        for p in self.wand_markers(self.clock.map_time(video_frame)) {
            if let Ok(pr) = model.project(&p) {
                if pr.visible {
                    dot(pr.pixel, 255);
                }
            }
        }
        img
    }
}

fn wand_markers(mocap_frame: i64) -> [Point3; WAND_MARKERS] {
    let t = mocap_frame as f64 / 100.0;
    let a = 0.25 * t;
    let center = Point3::new(
        ARENA_MM[0] / 2.0 + 1000.0 * a.cos(),
        ARENA_MM[1] / 2.0 + 1000.0 * a.sin(),
        1000.0 + 350.0 * (0.6 * t).sin(),
    );
    let az = a + 0.8 * (0.4 * t).sin();
    let el = 0.5 * (0.35 * t).cos();
    let dir = Vector3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin());
    let half = WAND_SPACING_MM * (WAND_MARKERS - 1) as f64 / 2.0;
    std::array::from_fn(|i| center + dir * (i as f64 * WAND_SPACING_MM - half))
}

pub fn wand_marker_id(i: usize) -> String {
    format!("wand_{}", i + 1)
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

/// Builds a complete synthetic session. Every random draw comes from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cameras = standard_rig(spec.distortion);
    let clock = ClockMap::nominal(spec.offset_mocap_frames);

    let mut taken: Vec<[f64; 6]> = Vec::new();
    let mut defs = Vec::new();
    let mut individuals = Vec::new();
    let mut templates = Vec::new();
    let mut gaits = Vec::new();
    let n = spec.individuals;
    for i in 0..n {
        let id = format!("bird{i}");
        for part in [BodyPart::Head, BodyPart::Backpack] {
            let pattern = random_pattern(&mut rng, &taken);
            let mut d = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].map(|(a, b)| (pattern[a] - pattern[b]).norm());
            d.sort_by(f64::total_cmp);
            taken.push(d);
            let body_id = format!("{id}_{}", part.as_str());
            let marker_ids = std::array::from_fn(|k| format!("{body_id}_{}", k + 1));
            defs.push(
                RigidBodyDef::new(body_id, part, id.clone(), marker_ids, pattern).expect("pattern passes checks"),
            );
        }
        individuals.push(Individual {
            individual_id: id.clone(),
            head_body: format!("{id}_{}", BodyPart::Head.as_str()),
            backpack_body: format!("{id}_{}", BodyPart::Backpack.as_str()),
        });
        let scale: f64 = rng.random_range(0.9..1.1);
        let keypoints: BTreeMap<KeypointId, KeypointEntry> = KeypointId::ALL
            .iter()
            .map(|&k| {
                let o = base_offsets(k) * scale;
                (
                    k,
                    KeypointEntry {
                        offset: [o.x, o.y, o.z],
                        n: 0,
                        spread: None,
                    },
                )
            })
            .collect();
        templates.push(KeypointTemplate {
            individual_id: id,
            keypoints,
        });
        let spacing = 900.0;
        gaits.push(Gait {
            center: Point3::new(
                ARENA_MM[0] / 2.0 + spacing * (i as f64 - (n as f64 - 1.0) / 2.0),
                ARENA_MM[1] / 2.0,
                0.0,
            ),
            radius: rng.random_range(220.0..300.0),
            omega: if i % 2 == 0 { 1.0 } else { -1.0 } * rng.random_range(0.4..0.7),
            phase: rng.random_range(0.0..TAU),
            peck_period: rng.random_range(2.5..4.5),
            scan_phase: rng.random_range(0.0..TAU),
        });
    }

    let mut scene = SyntheticScene {
        spec: *spec,
        cameras,
        individuals,
        defs,
        templates,
        clock,
        marker_frames: Vec::new(),
        true_tracks: Vec::new(),
        annotations: Vec::new(),
        calibration_clicks: Vec::new(),
        flash: generate_flash_traces(
            &FlashTrainSpec {
                duration_s: spec.flash_duration_s,
                offset_mocap_frames: spec.offset_mocap_frames,
                ..FlashTrainSpec::default()
            },
            &mut rng,
        ),
        predictions: Vec::new(),
        corrupted: Vec::new(),
        gaits,
    };

    // mo-cap stream covering the video range with a small margin
    let range = scene.video_range();
    let m0 = clock.map_time(range.start) - 5;
    let m1 = clock.map_time(range.end - 1) + 5;
    let marker_noise = gaussian(spec.marker_noise_mm);
    let mut tracks: Vec<BodyTrack> = scene
        .defs
        .iter()
        .map(|d| BodyTrack {
            body_id: d.body_id.clone(),
            samples: Vec::with_capacity((m1 - m0 + 1) as usize),
        })
        .collect();
    for m in m0..=m1 {
        let mut markers = Vec::new();
        for (b, def) in scene.defs.iter().enumerate() {
            let ind = b / 2;
            let pose = scene.true_pose(ind, def.part, m);
            tracks[b].samples.push(PoseSample {
                frame_index: m,
                pose: Some(pose),
                residual_mm: Some(0.0),
                valid: true,
            });
            for (id, p) in def.marker_ids.iter().zip(&def.template) {
                let mut q = pose.apply(p);
                if spec.marker_noise_mm > 0.0 {
                    q += Vector3::from_fn(|_, _| marker_noise.sample(&mut rng));
                }
                markers.push(Marker::valid(id.clone(), q));
            }
        }
        for (i, p) in wand_markers(m).into_iter().enumerate() {
            markers.push(Marker::valid(wand_marker_id(i), p));
        }
        scene.marker_frames.push(MarkerFrame::new(m, markers));
    }
    scene.true_tracks = tracks;

    // manual keypoint clicks on evenly spaced frames
    let click_noise = gaussian(spec.click_noise_px);
    let len = spec.video_frames as f64;
    for a in 0..spec.annotated_frames {
        let f = range.start + ((a as f64 + 0.5) * len / spec.annotated_frames as f64) as i64;
        for i in 0..scene.individuals.len() {
            for c in 0..scene.cameras.len() {
                for (k, (px, vis)) in KeypointId::ALL.iter().zip(scene.true_pixels(i, c, f)) {
                    let mut ann = ManualAnnotation {
                        individual_id: scene.individuals[i].individual_id.clone(),
                        camera_id: scene.cameras[c].id.clone(),
                        video_frame: f,
                        keypoint: *k,
                        u: None,
                        v: None,
                        occluded: !vis,
                    };
                    if vis {
                        let (du, dv) = if spec.click_noise_px > 0.0 {
                            (click_noise.sample(&mut rng), click_noise.sample(&mut rng))
                        } else {
                            (0.0, 0.0)
                        };
                        ann.u = Some(px.x + du);
                        ann.v = Some(px.y + dv);
                    }
                    scene.annotations.push(ann);
                }
            }
        }
    }

    // calibration-wand clicks
    let wand_noise = gaussian(spec.wand_click_noise_px);
    for w in 0..spec.wand_frames {
        let f = range.start + ((w as f64 + 0.5) * len / spec.wand_frames as f64) as i64;
        let markers = wand_markers(clock.map_time(f));
        for cam in &scene.cameras {
            let mut clicks = Vec::new();
            for (i, p) in markers.iter().enumerate() {
                let Ok(pr) = cam.model.project(p) else { continue };
                if !pr.visible {
                    continue;
                }
                let (du, dv) = if spec.wand_click_noise_px > 0.0 {
                    (wand_noise.sample(&mut rng), wand_noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                clicks.push(CalibrationClick {
                    marker_id: wand_marker_id(i),
                    u: pr.pixel.x + du,
                    v: pr.pixel.y + dv,
                });
            }
            if !clicks.is_empty() {
                scene.calibration_clicks.push(ClickObservation {
                    camera_id: cam.id.clone(),
                    video_frame: f,
                    clicks,
                });
            }
        }
    }

    // detector output: truth plus noise, head keypoints corrupted on a fraction of instances
    let pred_noise = gaussian(spec.prediction_noise_px);
    for f in range.clone() {
        for i in 0..scene.individuals.len() {
            for c in 0..scene.cameras.len() {
                let corrupt = spec.corrupt_fraction > 0.0 && rng.random_bool(spec.corrupt_fraction.min(1.0));
                let (shift_len, shift_dir) = (rng.random_range(60.0..120.0), rng.random_range(0.0..TAU));
                let pixels = scene.true_pixels(i, c, f);
                let mut any = false;
                for (k, (px, vis)) in KeypointId::ALL.iter().zip(pixels) {
                    if !vis {
                        continue;
                    }
                    any = true;
                    let (mut du, mut dv) = if spec.prediction_noise_px > 0.0 {
                        (pred_noise.sample(&mut rng), pred_noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    if corrupt && k.part() == BodyPart::Head {
                        // each head keypoint lands somewhere different
                        let dir = shift_dir + k.index() as f64 * 1.3;
                        du += shift_len * dir.cos();
                        dv += shift_len * dir.sin();
                    }
                    scene.predictions.push(PredictionRecord {
                        frame: f,
                        individual: scene.individuals[i].individual_id.clone(),
                        camera: scene.cameras[c].id.clone(),
                        keypoint: *k,
                        u: px.x + du,
                        v: px.y + dv,
                        confidence: if corrupt && k.part() == BodyPart::Head {
                            0.4
                        } else {
                            0.95
                        },
                    });
                }
                if corrupt && any {
                    scene.corrupted.push(InstanceKey {
                        frame: f,
                        individual: scene.individuals[i].individual_id.clone(),
                        camera: scene.cameras[c].id.clone(),
                    });
                }
            }
        }
    }
    scene
}
