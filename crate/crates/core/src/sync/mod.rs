//! Video ↔ mo-cap clock alignment from periodic LED flashes.

mod generate;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::FormatError;

pub use generate::{generate_flash_traces, FlashTraces, FlashTrainSpec};

pub const NOMINAL_VIDEO_RATE: f64 = 30.0;
pub const NOMINAL_MOCAP_RATE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncConfig {
    /// Onset-to-onset flash period, seconds.
    pub period_s: f64,
    /// Frame-to-frame intensity rise that marks a video onset.
    pub video_threshold: f64,
    /// Marker count at or below which the LED object reads as off.
    pub mocap_off_max: u32,
    /// Marker count at or above which the LED object reads as on.
    pub mocap_on_min: u32,
    /// Allowed deviation of an interval from a whole number of periods, as a fraction of one period.
    pub period_tolerance: f64,
    pub max_residual_frames: f64,
    /// Allowed relative deviation of the fitted rate from the nominal ratio.
    pub max_rate_deviation: f64,
    pub video_rate: f64,
    pub mocap_rate: f64,
    pub fit: ClockFit,
}

/// Estimator for the affine clock map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockFit {
    LeastSquares,
    /// Center of the maps that put every mo-cap onset within half a frame of its video
    /// onset; least squares when no such map exists.
    Quantized,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            period_s: 6.0,
            video_threshold: 30.0,
            mocap_off_max: 4,
            mocap_on_min: 6,
            period_tolerance: 0.10,
            max_residual_frames: 0.5,
            max_rate_deviation: 1e-3,
            video_rate: NOMINAL_VIDEO_RATE,
            mocap_rate: NOMINAL_MOCAP_RATE,
            fit: ClockFit::Quantized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("no flashes detected in the {0} stream")]
    NoFlashesDetected(FlashSource),
    #[error("interval of {interval:.2} frames after onset {after} is not a whole number of periods")]
    IrregularPeriod { after: f64, interval: f64 },
    #[error("only {0} flashes could be matched; at least 2 are needed")]
    InsufficientMatches(usize),
    #[error("clock fit residual {0:.3} mo-cap frames exceeds the limit")]
    ResidualTooHigh(f64),
    #[error("fitted rate {rate:.6} deviates from nominal {nominal:.6}")]
    RateOutOfRange { rate: f64, nominal: f64 },
}

impl SyncError {
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::EmptySignal => "EmptySignal",
            SyncError::NoFlashesDetected(_) => "NoFlashesDetected",
            SyncError::IrregularPeriod { .. } => "IrregularPeriod",
            SyncError::InsufficientMatches(_) => "InsufficientMatches",
            SyncError::ResidualTooHigh(_) => "ResidualTooHigh",
            SyncError::RateOutOfRange { .. } => "RateOutOfRange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlashSource {
    Video,
    Mocap,
}

impl std::fmt::Display for FlashSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlashSource::Video => "video",
            FlashSource::Mocap => "mocap",
        })
    }
}

/// Per-frame maximum pixel value inside the LED crop box.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySignal {
    pub first_frame: i64,
    pub values: Vec<f64>,
    pub frame_rate: f64,
}

/// Per-frame number of reconstructed markers on the LED object.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerCountSignal {
    pub first_frame: i64,
    pub counts: Vec<u32>,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Onset {
    pub frame: f64,
    pub inferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashTimeline {
    pub source: FlashSource,
    pub frame_rate: f64,
    /// Strictly increasing.
    pub onsets: Vec<Onset>,
}

impl FlashTimeline {
    pub fn frames(&self) -> Vec<f64> {
        self.onsets.iter().map(|o| o.frame).collect()
    }

    pub fn detected(&self) -> impl Iterator<Item = f64> + '_ {
        self.onsets.iter().filter(|o| !o.inferred).map(|o| o.frame)
    }
}

/// Affine map from video frame to mo-cap frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockMap {
    pub offset: f64,
    pub rate: f64,
    /// RMS fit residual, mo-cap frames.
    pub residual: f64,
    pub matched: usize,
}

impl ClockMap {
    /// Exact nominal mapping with a known offset.
    pub fn nominal(offset: f64) -> Self {
        Self {
            offset,
            rate: NOMINAL_MOCAP_RATE / NOMINAL_VIDEO_RATE,
            residual: 0.0,
            matched: 0,
        }
    }

    pub fn map_continuous(&self, video_frame: f64) -> f64 {
        self.offset + self.rate * video_frame
    }

    /// Mo-cap frame nearest in time to the given video frame.
    pub fn map_time(&self, video_frame: i64) -> i64 {
        self.map_continuous(video_frame as f64).round() as i64
    }
}

fn merge_close(onsets: Vec<f64>, min_gap: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(onsets.len());
    for o in onsets {
        if out.last().is_none_or(|&last| o - last >= min_gap) {
            out.push(o);
        }
    }
    out
}

/// Onsets are frames whose intensity rises by more than the threshold over the previous
/// frame; onsets within half a period of an earlier one belong to the same flash.
pub fn detect_flashes_video(signal: &IntensitySignal, config: &SyncConfig) -> Result<FlashTimeline, SyncError> {
    if signal.values.is_empty() {
        return Err(SyncError::EmptySignal);
    }
    let raw: Vec<f64> = signal
        .values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] - w[0] > config.video_threshold)
        .map(|(i, _)| (signal.first_frame + i as i64 + 1) as f64)
        .collect();
    let onsets = merge_close(raw, 0.5 * config.period_s * signal.frame_rate);
    if onsets.is_empty() {
        return Err(SyncError::NoFlashesDetected(FlashSource::Video));
    }
    Ok(FlashTimeline {
        source: FlashSource::Video,
        frame_rate: signal.frame_rate,
        onsets: onsets
            .into_iter()
            .map(|frame| Onset { frame, inferred: false })
            .collect(),
    })
}

/// Onsets are off → on transitions of the marker count, where counts between the off and
/// on levels keep the previous state.
pub fn detect_flashes_mocap(signal: &MarkerCountSignal, config: &SyncConfig) -> Result<FlashTimeline, SyncError> {
    if signal.counts.is_empty() {
        return Err(SyncError::EmptySignal);
    }
    let mut on = signal.counts[0] >= config.mocap_on_min;
    let mut onsets = Vec::new();
    for (i, &c) in signal.counts.iter().enumerate().skip(1) {
        if !on && c >= config.mocap_on_min {
            onsets.push((signal.first_frame + i as i64) as f64);
            on = true;
        } else if on && c <= config.mocap_off_max {
            on = false;
        }
    }
    let onsets = merge_close(onsets, 0.5 * config.period_s * signal.frame_rate);
    if onsets.is_empty() {
        return Err(SyncError::NoFlashesDetected(FlashSource::Mocap));
    }
    Ok(FlashTimeline {
        source: FlashSource::Mocap,
        frame_rate: signal.frame_rate,
        onsets: onsets
            .into_iter()
            .map(|frame| Onset { frame, inferred: false })
            .collect(),
    })
}

/// Inserts flagged onsets into gaps spanning several periods. Detected onsets are never moved.
pub fn fill_missing_flashes(timeline: &FlashTimeline, config: &SyncConfig) -> Result<FlashTimeline, SyncError> {
    let period = config.period_s * timeline.frame_rate;
    let mut onsets = Vec::with_capacity(timeline.onsets.len());
    for (i, o) in timeline.onsets.iter().enumerate() {
        if let Some(prev) = i.checked_sub(1).map(|p| timeline.onsets[p]) {
            let interval = o.frame - prev.frame;
            let k = (interval / period).round();
            if k < 1.0 || (interval - k * period).abs() > config.period_tolerance * period {
                return Err(SyncError::IrregularPeriod {
                    after: prev.frame,
                    interval,
                });
            }
            for j in 1..k as i64 {
                onsets.push(Onset {
                    frame: prev.frame + j as f64 * period,
                    inferred: true,
                });
            }
        }
        onsets.push(*o);
    }
    Ok(FlashTimeline {
        source: timeline.source,
        frame_rate: timeline.frame_rate,
        onsets,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let nf = x.len() as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let rate = sxy / sxx;
    Some((my - rate * mx, rate))
}

/// Midpoint of the offsets of all lines within `half` of every point, then the midpoint
/// of the admissible rates at that offset. `None` when no line qualifies.
fn quantized_fit(x: &[f64], y: &[f64], half: f64) -> Option<(f64, f64)> {
    const TOL: f64 = 1e-7;
    let ok = |o: f64, r: f64| x.iter().zip(y).all(|(a, b)| (o + r * a - b).abs() <= half + TOL);
    // the extreme offsets sit on vertices of the feasible polygon
    let lines: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .flat_map(|(&a, &b)| [(a, b - half), (a, b + half)])
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &(x1, c1)) in lines.iter().enumerate() {
        for &(x2, c2) in &lines[i + 1..] {
            if x1 == x2 {
                continue;
            }
            let r = (c1 - c2) / (x1 - x2);
            let o = c1 - r * x1;
            if (o < lo || o > hi) && ok(o, r) {
                lo = lo.min(o);
                hi = hi.max(o);
            }
        }
    }
    if lo > hi {
        return None;
    }
    let offset = 0.5 * (lo + hi);
    let (mut r_lo, mut r_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&a, &b) in x.iter().zip(y) {
        if a == 0.0 {
            continue;
        }
        let (p, q) = ((b - half - offset) / a, (b + half - offset) / a);
        r_lo = r_lo.max(p.min(q));
        r_hi = r_hi.min(p.max(q));
    }
    Some((offset, 0.5 * (r_lo + r_hi)))
}

/// Pairs flashes by order starting from the first onset of each stream and fits
/// `mocap = offset + rate · video` to the pairs detected in both streams. Inferred onsets
/// only keep the pairing aligned across deleted flashes.
pub fn build_clock_map(
    video: &FlashTimeline,
    mocap: &FlashTimeline,
    config: &SyncConfig,
) -> Result<ClockMap, SyncError> {
    let n = video.onsets.len().min(mocap.onsets.len());
    if n < 2 {
        return Err(SyncError::InsufficientMatches(n));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = video.onsets[..n]
        .iter()
        .zip(&mocap.onsets[..n])
        .filter(|(v, m)| !v.inferred && !m.inferred)
        .map(|(v, m)| (v.frame, m.frame))
        .unzip();
    if x.len() < 2 {
        return Err(SyncError::InsufficientMatches(x.len()));
    }
    let lsq = least_squares(&x, &y).ok_or(SyncError::InsufficientMatches(1))?;
    let (offset, rate) = match config.fit {
        ClockFit::LeastSquares => lsq,
        ClockFit::Quantized => quantized_fit(&x, &y, 0.5).unwrap_or(lsq),
    };
    let residual = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (offset + rate * a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let nominal = config.mocap_rate / config.video_rate;
    if ((rate - nominal) / nominal).abs() > config.max_rate_deviation {
        return Err(SyncError::RateOutOfRange { rate, nominal });
    }
    if residual > config.max_residual_frames {
        return Err(SyncError::ResidualTooHigh(residual));
    }
    Ok(ClockMap {
        offset,
        rate,
        residual,
        matched: x.len(),
    })
}

/// Full chain: detect in both streams, fill, fit.
pub fn synchronize(
    video: &IntensitySignal,
    mocap: &MarkerCountSignal,
    config: &SyncConfig,
) -> Result<ClockMap, SyncError> {
    let v = fill_missing_flashes(&detect_flashes_video(video, config)?, config)?;
    let m = fill_missing_flashes(&detect_flashes_mocap(mocap, config)?, config)?;
    build_clock_map(&v, &m, config)
}

#[derive(Serialize, Deserialize)]
struct IntensityRow {
    frame: i64,
    intensity: f64,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    frame: i64,
    count: u32,
}

fn check_contiguous(first: i64, frames: &[i64]) -> Result<(), FormatError> {
    for (i, f) in frames.iter().enumerate() {
        if *f != first + i as i64 {
            return Err(FormatError::Invalid(format!(
                "trace frames must be contiguous; expected {} found {f}",
                first + i as i64
            )));
        }
    }
    Ok(())
}

/// Reads `frame,intensity`.
pub fn read_intensity_csv<R: Read>(reader: R, frame_rate: f64) -> Result<IntensitySignal, FormatError> {
    let rows: Vec<IntensityRow> = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()?;
    let first = rows.first().map_or(0, |r| r.frame);
    check_contiguous(first, &rows.iter().map(|r| r.frame).collect::<Vec<_>>())?;
    Ok(IntensitySignal {
        first_frame: first,
        values: rows.iter().map(|r| r.intensity).collect(),
        frame_rate,
    })
}

pub fn write_intensity_csv<W: Write>(writer: W, signal: &IntensitySignal) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, v) in signal.values.iter().enumerate() {
        w.serialize(IntensityRow {
            frame: signal.first_frame + i as i64,
            intensity: *v,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `frame,count`.
pub fn read_count_csv<R: Read>(reader: R, frame_rate: f64) -> Result<MarkerCountSignal, FormatError> {
    let rows: Vec<CountRow> = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()?;
    let first = rows.first().map_or(0, |r| r.frame);
    check_contiguous(first, &rows.iter().map(|r| r.frame).collect::<Vec<_>>())?;
    Ok(MarkerCountSignal {
        first_frame: first,
        counts: rows.iter().map(|r| r.count).collect(),
        frame_rate,
    })
}

pub fn write_count_csv<W: Write>(writer: W, signal: &MarkerCountSignal) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, c) in signal.counts.iter().enumerate() {
        w.serialize(CountRow {
            frame: signal.first_frame + i as i64,
            count: *c,
        })?;
    }
    w.flush()?;
    Ok(())
}
