use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{BoxRow, Keypoint2dRow, KeypointId};

use super::{PredictionRecord, QcError};

/// A predicted and a reference position of one keypoint. 2D pairs leave the third coordinate 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub keypoint: KeypointId,
    pub predicted: [f64; 3],
    pub reference: [f64; 3],
    /// Width of the reference bounding box, px; required for PCK.
    pub bbox_width: Option<f64>,
}

impl MatchedPair {
    pub fn distance(&self) -> f64 {
        (0..3)
            .map(|i| (self.predicted[i] - self.reference[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseEntry {
    pub keypoint: KeypointId,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckEntry {
    pub keypoint: KeypointId,
    /// Fraction of pairs within `threshold * bbox_width`, one per requested threshold.
    pub pck: Vec<f64>,
    pub count: usize,
}

/// Pairs predictions with visible per-camera annotations and attaches the box width.
pub fn match_2d(
    predictions: &[PredictionRecord],
    annotations: &[(String, Keypoint2dRow)],
    boxes: &[BoxRow],
) -> Vec<MatchedPair> {
    let widths: HashMap<(i64, &str, &str), f64> = boxes
        .iter()
        .map(|b| ((b.frame, b.individual.as_str(), b.camera.as_str()), b.x_max - b.x_min))
        .collect();
    let preds: HashMap<(i64, &str, &str, KeypointId), &PredictionRecord> = predictions
        .iter()
        .map(|p| ((p.frame, p.individual.as_str(), p.camera.as_str(), p.keypoint), p))
        .collect();
    annotations
        .iter()
        .filter_map(|(camera, row)| {
            let (u, v) = (row.u?, row.v?);
            if row.visible != 1 {
                return None;
            }
            let p = preds.get(&(row.frame, row.individual.as_str(), camera.as_str(), row.keypoint))?;
            Some(MatchedPair {
                keypoint: row.keypoint,
                predicted: [p.u, p.v, 0.0],
                reference: [u, v, 0.0],
                bbox_width: widths
                    .get(&(row.frame, row.individual.as_str(), camera.as_str()))
                    .copied(),
            })
        })
        .collect()
}

fn grouped(pairs: &[MatchedPair]) -> BTreeMap<KeypointId, Vec<&MatchedPair>> {
    let mut g: BTreeMap<KeypointId, Vec<&MatchedPair>> = BTreeMap::new();
    for p in pairs {
        g.entry(p.keypoint).or_default().push(p);
    }
    g
}

/// Per-keypoint root mean squared distance. Each keypoint is reduced in input order, so the
/// result does not depend on the thread count.
pub fn rmse_report(pairs: &[MatchedPair]) -> Result<Vec<RmseEntry>, QcError> {
    if pairs.is_empty() {
        return Err(QcError::NoMatchedPairs);
    }
    let groups: Vec<(KeypointId, Vec<&MatchedPair>)> = grouped(pairs).into_iter().collect();
    Ok(groups
        .into_par_iter()
        .map(|(k, ps)| {
            let ss: f64 = ps.iter().map(|p| p.distance().powi(2)).sum();
            RmseEntry {
                keypoint: k,
                rmse: (ss / ps.len() as f64).sqrt(),
                count: ps.len(),
            }
        })
        .collect())
}

/// Per-keypoint fraction of pairs with distance below `threshold * bbox_width`.
/// Pairs without a box width are ignored.
pub fn pck_report(pairs: &[MatchedPair], thresholds: &[f64]) -> Result<Vec<PckEntry>, QcError> {
    if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(QcError::InvalidParameter(format!(
            "PCK threshold must be positive, got {t}"
        )));
    }
    let usable: Vec<MatchedPair> = pairs
        .iter()
        .filter(|p| p.bbox_width.is_some_and(|w| w > 0.0))
        .copied()
        .collect();
    if usable.is_empty() {
        return Err(QcError::NoMatchedPairs);
    }
    let groups: Vec<(KeypointId, Vec<&MatchedPair>)> = grouped(&usable).into_iter().collect();
    Ok(groups
        .into_par_iter()
        .map(|(k, ps)| {
            let pck = thresholds
                .iter()
                .map(|t| {
                    let hits = ps
                        .iter()
                        .filter(|p| p.distance() < t * p.bbox_width.unwrap_or(0.0))
                        .count();
                    hits as f64 / ps.len() as f64
                })
                .collect();
            PckEntry {
                keypoint: k,
                pck,
                count: ps.len(),
            }
        })
        .collect())
}

pub fn format_rmse_table(entries: &[RmseEntry], unit: &str) -> String {
    let mut s = format!("{:<16}{:>12}{:>8}\n", "keypoint", format!("rmse[{unit}]"), "n");
    for e in entries {
        let _ = writeln!(s, "{:<16}{:>12.3}{:>8}", e.keypoint.as_str(), e.rmse, e.count);
    }
    s
}

pub fn format_pck_table(entries: &[PckEntry], thresholds: &[f64]) -> String {
    let mut s = format!("{:<16}", "keypoint");
    for t in thresholds {
        let _ = write!(s, "{:>10}", format!("pck@{t}"));
    }
    let _ = writeln!(s, "{:>8}", "n");
    for e in entries {
        let _ = write!(s, "{:<16}", e.keypoint.as_str());
        for v in &e.pck {
            let _ = write!(s, "{v:>10.3}");
        }
        let _ = writeln!(s, "{:>8}", e.count);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(k: KeypointId, d: f64, w: Option<f64>) -> MatchedPair {
        MatchedPair {
            keypoint: k,
            predicted: [d, 0.0, 0.0],
            reference: [0.0, 0.0, 0.0],
            bbox_width: w,
        }
    }

    #[test]
    fn rmse_per_keypoint() {
        let pairs = [
            pair(KeypointId::Tail, 3.0, None),
            pair(KeypointId::Beak, 1.0, None),
            pair(KeypointId::Tail, 4.0, None),
        ];
        let r = rmse_report(&pairs).unwrap();
        assert_eq!(r[0].keypoint, KeypointId::Beak);
        assert_eq!(r[0].rmse, 1.0);
        assert_eq!(r[1].count, 2);
        assert!((r[1].rmse - (12.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(rmse_report(&[]).unwrap_err(), QcError::NoMatchedPairs);
    }

    #[test]
    fn pck_threshold_is_strict() {
        let pairs = [
            pair(KeypointId::Nose, 5.0, Some(100.0)),
            pair(KeypointId::Nose, 4.9, Some(100.0)),
            pair(KeypointId::Nose, 9.0, Some(100.0)),
            pair(KeypointId::Nose, 1.0, None),
        ];
        let r = pck_report(&pairs, &[0.05, 0.10]).unwrap();
        assert_eq!(r[0].count, 3);
        assert!((r[0].pck[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r[0].pck[1], 1.0);
        assert_eq!(pck_report(&pairs[3..], &[0.05]).unwrap_err(), QcError::NoMatchedPairs);
        assert!(format_pck_table(&r, &[0.05, 0.10]).contains("nose"));
    }

    #[test]
    fn match_uses_visible_annotations_and_boxes() {
        let ann = vec![(
            "c".to_string(),
            Keypoint2dRow {
                frame: 2,
                individual: "p".into(),
                keypoint: KeypointId::Beak,
                u: Some(10.0),
                v: Some(10.0),
                visible: 1,
            },
        )];
        let pred = vec![PredictionRecord {
            frame: 2,
            individual: "p".into(),
            camera: "c".into(),
            keypoint: KeypointId::Beak,
            u: 13.0,
            v: 14.0,
            confidence: 0.5,
        }];
        let boxes = vec![BoxRow {
            frame: 2,
            individual: "p".into(),
            camera: "c".into(),
            x_min: 0.0,
            y_min: 0.0,
            x_max: 120.0,
            y_max: 50.0,
        }];
        let m = match_2d(&pred, &ann, &boxes);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].distance(), 5.0);
        assert_eq!(m[0].bbox_width, Some(120.0));
    }
}
