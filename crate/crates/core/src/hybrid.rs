//! Filling mo-cap gaps with 3D points triangulated from 2D detections, compared against
//! linear interpolation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{Keypoint3dRow, KeypointId};
use crate::formats::FormatError;
use crate::geometry::{triangulate, CameraModel, NamedCamera, Pixel, Point3, TriangulationOptions};
use crate::qc::{rmse_report, MatchedPair, PredictionRecord};

const PLACEMENT_ATTEMPTS: usize = 200;
const ATTEMPTS_PER_GAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HybridError {
    #[error("gap specification cannot be satisfied: {0}")]
    InfeasibleSpec(String),
    #[error("gap starting at frame {start} ({len} frames) touches the sequence boundary")]
    BoundaryGap { start: i64, len: usize },
    #[error("invalid keypoint track: {0}")]
    InvalidTrack(String),
}

impl HybridError {
    pub fn code(&self) -> &'static str {
        match self {
            HybridError::InfeasibleSpec(_) => "InfeasibleSpec",
            HybridError::BoundaryGap { .. } => "BoundaryGap",
            HybridError::InvalidTrack(_) => "InvalidTrack",
        }
    }
}

/// 3D keypoints of one individual over contiguous frames, in [`KeypointId::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrack {
    pub first_frame: i64,
    pub points: Vec<[Option<Point3>; 9]>,
}

impl KeypointTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, frame: i64, k: KeypointId) -> Option<Point3> {
        let i = usize::try_from(frame - self.first_frame).ok()?;
        self.points.get(i)?[k.index()]
    }

    /// Collects the rows of `individual`; frames missing between the first and last row and
    /// rows with `valid = 0` become empty.
    pub fn from_rows(rows: &[Keypoint3dRow], individual: &str) -> Result<Self, HybridError> {
        let mine: Vec<&Keypoint3dRow> = rows.iter().filter(|r| r.individual == individual).collect();
        let (Some(lo), Some(hi)) = (mine.iter().map(|r| r.frame).min(), mine.iter().map(|r| r.frame).max()) else {
            return Err(HybridError::InvalidTrack(format!(
                "no rows for individual {individual}"
            )));
        };
        let mut points = vec![[None; 9]; (hi - lo + 1) as usize];
        for r in mine {
            if r.valid == 1 {
                if let (Some(x), Some(y), Some(z)) = (r.x, r.y, r.z) {
                    points[(r.frame - lo) as usize][r.keypoint.index()] = Some(Point3::new(x, y, z));
                }
            }
        }
        Ok(Self {
            first_frame: lo,
            points,
        })
    }

    pub fn to_rows(&self, individual: &str) -> Vec<Keypoint3dRow> {
        let mut out = Vec::with_capacity(self.len() * 9);
        for (i, frame) in self.points.iter().enumerate() {
            for k in KeypointId::ALL {
                let p = frame[k.index()];
                out.push(Keypoint3dRow {
                    frame: self.first_frame + i as i64,
                    individual: individual.to_string(),
                    keypoint: k,
                    x: p.map(|p| p.x),
                    y: p.map(|p| p.y),
                    z: p.map(|p| p.z),
                    valid: u8::from(p.is_some()),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    /// Target fraction of frames removed, in [0, 1).
    pub fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GapSpec {
    fn default() -> Self {
        Self {
            fraction: 0.25,
            min_len: 30,
            max_len: 90,
            seed: 0,
        }
    }
}

/// A run of removed frames `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gap {
    pub start: i64,
    pub len: usize,
}

impl Gap {
    pub fn end(&self) -> i64 {
        self.start + self.len as i64
    }

    pub fn frames(&self) -> std::ops::Range<i64> {
        self.start..self.end()
    }
}

/// Removes whole frames in disjoint gaps placed by seeded rejection sampling. Gaps never
/// touch the first or last frame and are separated by at least one kept frame.
pub fn introduce_gaps(track: &KeypointTrack, spec: &GapSpec) -> Result<(KeypointTrack, Vec<Gap>), HybridError> {
    if !(0.0..1.0).contains(&spec.fraction) {
        return Err(HybridError::InfeasibleSpec(format!(
            "fraction {} outside [0, 1)",
            spec.fraction
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(HybridError::InfeasibleSpec(format!(
            "gap lengths {}..={} are not a positive range",
            spec.min_len, spec.max_len
        )));
    }
    let n = track.len();
    if n <= spec.max_len + 2 {
        return Err(HybridError::InfeasibleSpec(format!(
            "track of {n} frames is too short for gaps up to {}",
            spec.max_len
        )));
    }
    let target = (spec.fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lengths = Vec::new();
    let mut total = 0;
    while total < target {
        let l = rng.random_range(spec.min_len..=spec.max_len);
        lengths.push(l);
        total += l;
    }
    // every gap needs a kept frame after it, plus the first frame
    if total + lengths.len() + 1 > n {
        return Err(HybridError::InfeasibleSpec(format!(
            "{total} frames in {} gaps do not fit in {n} frames",
            lengths.len()
        )));
    }
    let mut placed = None;
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let mut gaps: Vec<(usize, usize)> = Vec::with_capacity(lengths.len());
        for &l in &lengths {
            let mut ok = false;
            for _ in 0..ATTEMPTS_PER_GAP {
                let s = rng.random_range(1..=n - 1 - l);
                if gaps.iter().all(|&(gs, gl)| s > gs + gl || s + l < gs) {
                    gaps.push((s, l));
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'attempt;
            }
        }
        placed = Some(gaps);
        break;
    }
    let Some(mut gaps) = placed else {
        return Err(HybridError::InfeasibleSpec(format!(
            "could not place {} gaps without overlap",
            lengths.len()
        )));
    };
    gaps.sort_unstable();
    let mut gapped = track.clone();
    for &(s, l) in &gaps {
        for f in &mut gapped.points[s..s + l] {
            *f = [None; 9];
        }
    }
    let gaps = gaps
        .into_iter()
        .map(|(s, len)| Gap {
            start: track.first_frame + s as i64,
            len,
        })
        .collect();
    Ok((gapped, gaps))
}

/// Result of [`fill_triangulation`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationFill {
    pub track: KeypointTrack,
    /// Gap entries without two usable views (or whose triangulation failed).
    pub unfilled: Vec<(i64, KeypointId)>,
}

/// Triangulates every keypoint of every gap frame from the predictions of `individual`.
/// Gaps are processed in parallel; non-gap frames are never touched.
pub fn fill_triangulation(
    gapped: &KeypointTrack,
    gaps: &[Gap],
    individual: &str,
    predictions: &[PredictionRecord],
    cameras: &[NamedCamera],
    options: &TriangulationOptions,
) -> TriangulationFill {
    let cam_index: HashMap<&str, usize> = cameras.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut index: HashMap<(i64, KeypointId), Vec<(usize, Pixel)>> = HashMap::new();
    for p in predictions.iter().filter(|p| p.individual == individual) {
        if let Some(&ci) = cam_index.get(p.camera.as_str()) {
            index
                .entry((p.frame, p.keypoint))
                .or_default()
                .push((ci, Pixel::new(p.u, p.v)));
        }
    }
    for obs in index.values_mut() {
        obs.sort_by_key(|(ci, _)| *ci);
        obs.dedup_by_key(|(ci, _)| *ci);
    }
    let per_gap: Vec<Vec<(i64, KeypointId, Option<Point3>)>> = gaps
        .par_iter()
        .map(|g| {
            let mut out = Vec::with_capacity(g.len * 9);
            for f in g.frames() {
                for k in KeypointId::ALL {
                    let point = index.get(&(f, k)).and_then(|obs| {
                        let views: Vec<(&CameraModel, Pixel)> =
                            obs.iter().map(|(ci, px)| (&cameras[*ci].model, *px)).collect();
                        triangulate(&views, options).ok().map(|t| t.point)
                    });
                    out.push((f, k, point));
                }
            }
            out
        })
        .collect();
    let mut track = gapped.clone();
    let mut unfilled = Vec::new();
    for (f, k, p) in per_gap.into_iter().flatten() {
        let Ok(i) = usize::try_from(f - track.first_frame) else {
            continue;
        };
        let Some(slot) = track.points.get_mut(i) else { continue };
        match p {
            Some(p) => slot[k.index()] = Some(p),
            None => unfilled.push((f, k)),
        }
    }
    TriangulationFill { track, unfilled }
}

/// Per-axis linear interpolation across each gap between the frames bounding it.
pub fn fill_linear(gapped: &KeypointTrack, gaps: &[Gap]) -> Result<KeypointTrack, HybridError> {
    let mut track = gapped.clone();
    let n = gapped.len() as i64;
    for g in gaps {
        let before = g.start - gapped.first_frame - 1;
        let after = g.end() - gapped.first_frame;
        if before < 0 || after >= n {
            return Err(HybridError::BoundaryGap {
                start: g.start,
                len: g.len,
            });
        }
        let (a, b) = (&gapped.points[before as usize], &gapped.points[after as usize]);
        for k in 0..9 {
            let (Some(pa), Some(pb)) = (a[k], b[k]) else { continue };
            for j in 1..=g.len {
                let t = j as f64 / (g.len + 1) as f64;
                track.points[before as usize + j][k] = Some(pa + (pb - pa) * t);
            }
        }
    }
    Ok(track)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub keypoint: KeypointId,
    /// RMSE in mm per method; `None` when a method filled no gap entry of this keypoint.
    pub rmse: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillComparison {
    pub methods: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Per-keypoint RMSE of each fill against ground truth over gap frames only.
pub fn compare_fills(truth: &KeypointTrack, fills: &[(&str, &KeypointTrack)], gaps: &[Gap]) -> FillComparison {
    let mut table: BTreeMap<KeypointId, ComparisonRow> = KeypointId::ALL
        .iter()
        .map(|&k| {
            (
                k,
                ComparisonRow {
                    keypoint: k,
                    rmse: vec![None; fills.len()],
                    count: vec![0; fills.len()],
                },
            )
        })
        .collect();
    for (m, (_, fill)) in fills.iter().enumerate() {
        let mut pairs = Vec::new();
        for g in gaps {
            for f in g.frames() {
                for k in KeypointId::ALL {
                    if let (Some(t), Some(p)) = (truth.get(f, k), fill.get(f, k)) {
                        pairs.push(MatchedPair {
                            keypoint: k,
                            predicted: [p.x, p.y, p.z],
                            reference: [t.x, t.y, t.z],
                            bbox_width: None,
                        });
                    }
                }
            }
        }
        if let Ok(report) = rmse_report(&pairs) {
            for e in report {
                let row = table.get_mut(&e.keypoint).expect("all keypoints present");
                row.rmse[m] = Some(e.rmse);
                row.count[m] = e.count;
            }
        }
    }
    FillComparison {
        methods: fills.iter().map(|(n, _)| n.to_string()).collect(),
        rows: table.into_values().collect(),
    }
}

impl FillComparison {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16}", "keypoint");
        for m in &self.methods {
            let _ = write!(s, "{:>14}", format!("{m}[mm]"));
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<16}", r.keypoint.as_str());
            for v in &r.rmse {
                match v {
                    Some(v) => {
                        let _ = write!(s, "{v:>14.3}");
                    }
                    None => {
                        let _ = write!(s, "{:>14}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// CSV with columns `keypoint,<method>_rmse_mm,<method>_n,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FormatError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["keypoint".to_string()];
        for m in &self.methods {
            header.push(format!("{m}_rmse_mm"));
            header.push(format!("{m}_n"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.keypoint.as_str().to_string()];
            for (v, n) in r.rmse.iter().zip(&r.count) {
                rec.push(v.map(|v| v.to_string()).unwrap_or_default());
                rec.push(n.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Distortion, Intrinsics, RigidTransform};
    use nalgebra::{Matrix3, Vector3};
    use rand_distr::{Distribution, Normal};

    fn rig() -> Vec<NamedCamera> {
        let target = Point3::new(1800.0, 2100.0, 0.0);
        [(0.0, 0.0), (3600.0, 0.0), (3600.0, 4200.0), (0.0, 4200.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let ext = RigidTransform::look_at(&Point3::new(x, y, 2500.0), &target, &Vector3::z()).unwrap();
                let intr = Intrinsics {
                    fx: 2000.0,
                    fy: 2000.0,
                    cx: 1920.0,
                    cy: 1080.0,
                    distortion: Distortion::none(),
                    width: 3840,
                    height: 2160,
                };
                NamedCamera {
                    id: format!("cam{i}"),
                    model: CameraModel::new(intr, ext).unwrap(),
                }
            })
            .collect()
    }

    /// Keypoints on a curved walk with a pecking head.
    fn truth(n: usize) -> KeypointTrack {
        let points = (0..n)
            .map(|i| {
                let t = i as f64 / 30.0;
                let base = Point3::new(
                    1800.0 + 400.0 * (0.3 * t).cos(),
                    2100.0 + 400.0 * (0.3 * t).sin(),
                    100.0,
                );
                std::array::from_fn(|k| {
                    let peck = if k < 4 { 40.0 * (2.0 * t).sin().powi(2) } else { 0.0 };
                    Some(base + Vector3::new(10.0 * k as f64, 5.0 * (k % 3) as f64, 20.0 - peck + 3.0 * k as f64))
                })
            })
            .collect();
        KeypointTrack {
            first_frame: 100,
            points,
        }
    }

    fn predictions(track: &KeypointTrack, cams: &[NamedCamera], sigma: f64, seed: u64) -> Vec<PredictionRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let mut out = Vec::new();
        for (i, f) in track.points.iter().enumerate() {
            for c in cams {
                for k in KeypointId::ALL {
                    let px = c.model.project(&f[k.index()].unwrap()).unwrap().pixel;
                    let (du, dv) = if sigma > 0.0 {
                        (noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    out.push(PredictionRecord {
                        frame: track.first_frame + i as i64,
                        individual: "p".into(),
                        camera: c.id.clone(),
                        keypoint: k,
                        u: px.x + du,
                        v: px.y + dv,
                        confidence: 1.0,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn gaps_hit_target_and_are_separated() {
        let t = truth(9000);
        let spec = GapSpec {
            seed: 4,
            ..GapSpec::default()
        };
        let (g, gaps) = introduce_gaps(&t, &spec).unwrap();
        let removed: usize = gaps.iter().map(|g| g.len).sum();
        assert!((2250..2250 + 90).contains(&removed), "{removed}");
        assert!((25..=75).contains(&gaps.len()));
        for w in gaps.windows(2) {
            assert!(w[1].start > w[0].end());
        }
        assert!(gaps[0].start > t.first_frame);
        assert!(gaps.last().unwrap().end() < t.first_frame + 9000);
        let empty = g.points.iter().filter(|f| f.iter().all(Option::is_none)).count();
        assert_eq!(empty, removed);
        assert_eq!(introduce_gaps(&t, &spec).unwrap().1, gaps);
    }

    #[test]
    fn zero_fraction_and_infeasible_specs() {
        let t = truth(500);
        let (g, gaps) = introduce_gaps(
            &t,
            &GapSpec {
                fraction: 0.0,
                ..GapSpec::default()
            },
        )
        .unwrap();
        assert!(gaps.is_empty());
        assert_eq!(g, t);
        let err = introduce_gaps(&truth(80), &GapSpec::default()).unwrap_err();
        assert_eq!(err.code(), "InfeasibleSpec");
        let err = introduce_gaps(
            &truth(200),
            &GapSpec {
                fraction: 0.99,
                ..GapSpec::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.code(), "InfeasibleSpec");
    }

    #[test]
    fn linear_fill_cases() {
        let still = KeypointTrack {
            first_frame: 0,
            points: vec![[Some(Point3::new(1.0, 2.0, 3.0)); 9]; 20],
        };
        let gaps = [Gap { start: 5, len: 6 }];
        let mut gapped = still.clone();
        for f in 5..11 {
            gapped.points[f] = [None; 9];
        }
        assert_eq!(fill_linear(&gapped, &gaps).unwrap(), still);

        let moving = KeypointTrack {
            first_frame: 0,
            points: (0..20)
                .map(|i| [Some(Point3::new(3.0 * i as f64, -1.5 * i as f64, 0.25 * i as f64)); 9])
                .collect(),
        };
        let mut gapped = moving.clone();
        for f in 5..11 {
            gapped.points[f] = [None; 9];
        }
        let filled = fill_linear(&gapped, &gaps).unwrap();
        for f in 0..20 {
            assert!((filled.points[f][0].unwrap() - moving.points[f][0].unwrap()).norm() < 1e-12);
        }
        assert_eq!(
            fill_linear(&gapped, &[Gap { start: 0, len: 3 }]).unwrap_err(),
            HybridError::BoundaryGap { start: 0, len: 3 }
        );
        assert_eq!(
            fill_linear(&gapped, &[Gap { start: 15, len: 5 }]).unwrap_err().code(),
            "BoundaryGap"
        );
    }

    #[test]
    fn noiseless_triangulation_recovers_truth_and_touches_only_gaps() {
        let cams = rig();
        let t = truth(400);
        let (g, gaps) = introduce_gaps(
            &t,
            &GapSpec {
                seed: 9,
                ..GapSpec::default()
            },
        )
        .unwrap();
        let fill = fill_triangulation(
            &g,
            &gaps,
            "p",
            &predictions(&t, &cams, 0.0, 0),
            &cams,
            &Default::default(),
        );
        assert!(fill.unfilled.is_empty());
        for (i, (a, b)) in fill.track.points.iter().zip(&t.points).enumerate() {
            for k in 0..9 {
                assert!((a[k].unwrap() - b[k].unwrap()).norm() < 1e-6, "frame {i}");
            }
        }
        let in_gap = |f: i64| gaps.iter().any(|g| g.frames().contains(&f));
        let linear = fill_linear(&g, &gaps).unwrap();
        for (i, (a, b)) in linear.points.iter().zip(&g.points).enumerate() {
            if !in_gap(t.first_frame + i as i64) {
                assert_eq!(a, b);
            }
        }
        let cmp = compare_fills(&t, &[("truth", &t), ("hybrid", &fill.track)], &gaps);
        assert!(cmp
            .rows
            .iter()
            .all(|r| r.rmse[0] == Some(0.0) && r.rmse[1].unwrap() < 1e-6));
    }

    #[test]
    fn single_view_frames_are_reported() {
        let cams = rig();
        let t = truth(300);
        let gaps = vec![Gap { start: 150, len: 3 }];
        let mut g = t.clone();
        for f in 50..53 {
            g.points[f] = [None; 9];
        }
        let preds: Vec<PredictionRecord> = predictions(&t, &cams, 0.0, 0)
            .into_iter()
            .filter(|p| p.frame != 151 || p.camera == "cam0")
            .collect();
        let fill = fill_triangulation(&g, &gaps, "p", &preds, &cams, &Default::default());
        assert_eq!(fill.unfilled.len(), 9);
        assert!(fill.unfilled.iter().all(|(f, _)| *f == 151));
        assert!(fill.track.points[51].iter().all(Option::is_none));
    }

    /// First-order error propagation: with isotropic pixel noise σ the triangulated point has
    /// covariance σ² (JᵀJ)⁻¹, J the stacked projection Jacobians (finite differences here).
    fn predicted_rmse(cams: &[NamedCamera], p: &Point3, sigma: f64) -> f64 {
        let h = 1e-3;
        let mut jtj = Matrix3::zeros();
        for c in cams {
            let mut j = nalgebra::Matrix2x3::zeros();
            for a in 0..3 {
                let mut d = Vector3::zeros();
                d[a] = h;
                let plus = c.model.project(&(p + d)).unwrap().pixel;
                let minus = c.model.project(&(p - d)).unwrap().pixel;
                j.set_column(a, &((plus - minus) / (2.0 * h)));
            }
            jtj += j.transpose() * j;
        }
        (sigma * sigma * jtj.try_inverse().unwrap().trace()).sqrt()
    }

    #[test]
    fn two_px_noise_matches_error_propagation() {
        let cams = rig();
        let t = truth(3000);
        let gaps = vec![Gap { start: 101, len: 2898 }];
        let fill = fill_triangulation(
            &t,
            &gaps,
            "p",
            &predictions(&t, &cams, 2.0, 17),
            &cams,
            &Default::default(),
        );
        let cmp = compare_fills(&t, &[("hybrid", &fill.track)], &gaps);
        for r in &cmp.rows {
            let k = r.keypoint.index();
            let expected = (t.points[1..2999]
                .iter()
                .map(|f| predicted_rmse(&cams, &f[k].unwrap(), 2.0).powi(2))
                .sum::<f64>()
                / 2998.0)
                .sqrt();
            let got = r.rmse[0].unwrap();
            assert!(
                (got / expected - 1.0).abs() < 0.1,
                "{}: {got} vs {expected}",
                r.keypoint
            );
        }
    }

    #[test]
    fn rows_round_trip_and_report_formats() {
        let t = truth(5);
        let rows = t.to_rows("p");
        assert_eq!(KeypointTrack::from_rows(&rows, "p").unwrap(), t);
        assert!(KeypointTrack::from_rows(&rows, "q").is_err());
        let cmp = compare_fills(&t, &[("linear", &t)], &[Gap { start: 101, len: 2 }]);
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("keypoint,linear_rmse_mm,linear_n\nbeak,0,2\n"),
            "{text}"
        );
        assert!(cmp.to_table().contains("linear[mm]"));
    }
}
