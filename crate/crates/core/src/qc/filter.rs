use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotate::{Keypoint2dRow, KeypointId};

use super::gesd::{gesd_outliers, DEFAULT_MAX_OUTLIER_FRACTION, DEFAULT_SIGNIFICANCE};
use super::PredictionRecord;

/// One cropped image of one individual: the unit that is kept or dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub frame: i64,
    pub individual: String,
    pub camera: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub sequence: String,
    pub instance: InstanceKey,
    pub keypoint: KeypointId,
    /// Euclidean prediction-vs-annotation distance, px.
    pub error_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GesdScope {
    /// One test per sequence and keypoint.
    PerSequence,
    /// One test per keypoint over all sequences.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_outlier_fraction: f64,
    pub significance: f64,
    /// Instances with at least this many flagged keypoints are dropped.
    pub min_flagged: usize,
    pub scope: GesdScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_outlier_fraction: DEFAULT_MAX_OUTLIER_FRACTION,
            significance: DEFAULT_SIGNIFICANCE,
            min_flagged: 2,
            scope: GesdScope::PerSequence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub kept: Vec<InstanceKey>,
    pub dropped: Vec<InstanceKey>,
    pub drop_fraction: f64,
    /// Number of flagged (instance, keypoint) errors.
    pub flagged: usize,
    /// Groups too small for the test, reported as `sequence/keypoint`.
    pub untested_groups: Vec<String>,
}

impl FilterReport {
    /// Distinct video frames with at least one dropped instance.
    pub fn dropped_frames(&self) -> Vec<i64> {
        let s: BTreeSet<i64> = self.dropped.iter().map(|k| k.frame).collect();
        s.into_iter().collect()
    }
}

/// Pairs predictions with visible 2D annotations; keypoints without a prediction are skipped.
pub fn error_samples(
    sequence: &str,
    predictions: &[PredictionRecord],
    annotations: &[(String, Keypoint2dRow)],
) -> Vec<ErrorSample> {
    let mut by_key: HashMap<(i64, &str, &str, KeypointId), (f64, f64)> = HashMap::new();
    for (camera, row) in annotations {
        if let (Some(u), Some(v), 1) = (row.u, row.v, row.visible) {
            by_key.insert(
                (row.frame, row.individual.as_str(), camera.as_str(), row.keypoint),
                (u, v),
            );
        }
    }
    let mut out: Vec<ErrorSample> = predictions
        .iter()
        .filter_map(|p| {
            let (u, v) = by_key.get(&(p.frame, p.individual.as_str(), p.camera.as_str(), p.keypoint))?;
            Some(ErrorSample {
                sequence: sequence.to_string(),
                instance: InstanceKey {
                    frame: p.frame,
                    individual: p.individual.clone(),
                    camera: p.camera.clone(),
                },
                keypoint: p.keypoint,
                error_px: ((p.u - u).powi(2) + (p.v - v).powi(2)).sqrt(),
            })
        })
        .collect();
    out.sort_by(|a, b| (&a.instance, a.keypoint).cmp(&(&b.instance, b.keypoint)));
    out
}

/// Runs GESD independently per keypoint (and per sequence unless pooled) and drops every
/// instance with at least `min_flagged` flagged keypoints.
pub fn filter_frames(samples: &[ErrorSample], config: &FilterConfig) -> FilterReport {
    let mut groups: BTreeMap<(String, KeypointId), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let seq = match config.scope {
            GesdScope::PerSequence => s.sequence.clone(),
            GesdScope::Pooled => String::new(),
        };
        groups.entry((seq, s.keypoint)).or_default().push(i);
    }
    let mut flags: BTreeMap<(&str, &InstanceKey), usize> = BTreeMap::new();
    let mut untested = Vec::new();
    let mut flagged = 0;
    for ((seq, k), idx) in &groups {
        let values: Vec<f64> = idx.iter().map(|&i| samples[i].error_px).collect();
        match gesd_outliers(&values, config.max_outlier_fraction, config.significance) {
            Ok(out) => {
                flagged += out.len();
                for o in out {
                    let s = &samples[idx[o]];
                    *flags.entry((s.sequence.as_str(), &s.instance)).or_default() += 1;
                }
            }
            Err(_) => untested.push(format!("{seq}/{k}")),
        }
    }
    let all: BTreeSet<(&str, &InstanceKey)> = samples.iter().map(|s| (s.sequence.as_str(), &s.instance)).collect();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for key in &all {
        if flags.get(key).copied().unwrap_or(0) >= config.min_flagged {
            dropped.push(key.1.clone());
        } else {
            kept.push(key.1.clone());
        }
    }
    let total = kept.len() + dropped.len();
    FilterReport {
        drop_fraction: if total == 0 {
            0.0
        } else {
            dropped.len() as f64 / total as f64
        },
        kept,
        dropped,
        flagged,
        untested_groups: untested,
    }
}
