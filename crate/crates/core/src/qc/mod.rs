//! Outlier filtering against external 2D predictions, gap statistics, error metrics and
//! pose-variation counts.

mod filter;
mod gaps;
mod gesd;
mod metrics;
mod pose;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::KeypointId;
use crate::formats::FormatError;

pub use filter::{error_samples, filter_frames, ErrorSample, FilterConfig, FilterReport, GesdScope, InstanceKey};
pub use gaps::{gap_statistics, GapHistogram};
pub use gesd::{gesd_critical_value, gesd_outliers, DEFAULT_MAX_OUTLIER_FRACTION, DEFAULT_SIGNIFICANCE};
pub use metrics::{
    format_pck_table, format_rmse_table, match_2d, pck_report, rmse_report, MatchedPair, PckEntry, RmseEntry,
};
pub use pose::{count_unique_poses, pose_orientation, PoseOrientation, UniquePoseCounts};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QcError {
    #[error("GESD needs more than 10 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no matched prediction/annotation pairs")]
    NoMatchedPairs,
    #[error("plane points are collinear")]
    DegeneratePlane,
    #[error("keypoint {0} is missing")]
    MissingKeypoint(KeypointId),
}

impl QcError {
    pub fn code(&self) -> &'static str {
        match self {
            QcError::TooFewSamples { .. } => "TooFewSamples",
            QcError::InvalidParameter(_) => "InvalidParameter",
            QcError::NoMatchedPairs => "NoMatchedPairs",
            QcError::DegeneratePlane => "DegeneratePlane",
            QcError::MissingKeypoint(_) => "MissingKeypoint",
        }
    }
}

/// One externally predicted keypoint: `frame,individual,camera,keypoint,u,v,confidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame: i64,
    pub individual: String,
    pub camera: String,
    pub keypoint: KeypointId,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<PredictionRecord>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let want = ["frame", "individual", "camera", "keypoint", "u", "v", "confidence"];
    if header != want {
        return Err(FormatError::Invalid(format!("expected header {}", want.join(","))));
    }
    let rows: Vec<PredictionRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
    if let Some(r) = rows
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.confidence) || !r.u.is_finite() || !r.v.is_finite())
    {
        return Err(FormatError::Invalid(format!(
            "prediction at frame {} ({} {} {}) has a non-finite pixel or confidence outside [0,1]",
            r.frame, r.individual, r.camera, r.keypoint
        )));
    }
    Ok(rows)
}

pub fn write_predictions_csv<W: Write>(writer: W, rows: &[PredictionRecord]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_csv_round_trip_and_checks() {
        let rows = vec![PredictionRecord {
            frame: 4,
            individual: "p1".into(),
            camera: "cam0".into(),
            keypoint: KeypointId::LeftEye,
            u: 10.5,
            v: 20.25,
            confidence: 0.9,
        }];
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "frame,individual,camera,keypoint,u,v,confidence\n4,p1,cam0,left_eye,10.5,20.25,0.9\n"
        );
        assert_eq!(read_predictions_csv(&buf[..]).unwrap(), rows);
        let bad = "frame,individual,camera,keypoint,u,v,confidence\n4,p1,cam0,left_eye,1,2,1.5\n";
        assert!(read_predictions_csv(bad.as_bytes()).is_err());
    }
}
