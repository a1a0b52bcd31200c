use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{IntensitySignal, MarkerCountSignal, NOMINAL_MOCAP_RATE, NOMINAL_VIDEO_RATE};

/// Synthetic LED flash trains seen by one camera and by the mo-cap system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashTrainSpec {
    pub duration_s: f64,
    /// Mo-cap frame of video frame 0.
    pub offset_mocap_frames: f64,
    /// Relative deviation of the true rate ratio from 100/30.
    pub drift: f64,
    pub first_flash_video_frame: i64,
    pub period_s: f64,
    pub on_time_s: f64,
    pub baseline: f64,
    pub on_level: f64,
    pub noise_sigma: f64,
    /// Fraction of flashes removed independently from each stream. The first flash is kept.
    pub delete_fraction: f64,
    /// Probability that the mo-cap frame before an onset reads one marker short of "on".
    pub transition_probability: f64,
}

impl Default for FlashTrainSpec {
    fn default() -> Self {
        Self {
            duration_s: 120.0,
            offset_mocap_frames: 137.0,
            drift: 0.0,
            first_flash_video_frame: 45,
            period_s: 6.0,
            on_time_s: 1.0,
            baseline: 40.0,
            on_level: 230.0,
            noise_sigma: 0.0,
            delete_fraction: 0.0,
            transition_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlashTraces {
    pub video: IntensitySignal,
    pub mocap: MarkerCountSignal,
    pub true_rate: f64,
    /// Video onset of every generated flash, deleted or not.
    pub video_onsets: Vec<i64>,
    pub mocap_onsets: Vec<i64>,
    pub deleted_video: Vec<usize>,
    pub deleted_mocap: Vec<usize>,
}

fn pick_deleted(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    let k = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (1..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<usize> = idx.into_iter().take(k).collect();
    out.sort_unstable();
    out
}

/// Flashes start on exact video frames; their mo-cap onsets are the nearest mo-cap frame
/// under the true affine clock.
pub fn generate_flash_traces(spec: &FlashTrainSpec, rng: &mut impl Rng) -> FlashTraces {
    let true_rate = NOMINAL_MOCAP_RATE / NOMINAL_VIDEO_RATE * (1.0 + spec.drift);
    let n_video = (spec.duration_s * NOMINAL_VIDEO_RATE).round() as usize;
    let period_v = (spec.period_s * NOMINAL_VIDEO_RATE).round() as i64;
    let on_v = (spec.on_time_s * NOMINAL_VIDEO_RATE).round() as usize;
    let on_m = (spec.on_time_s * NOMINAL_MOCAP_RATE).round() as usize;

    let mut video_onsets = Vec::new();
    let mut v = spec.first_flash_video_frame;
    while v >= 1 && (v as usize) + on_v < n_video {
        video_onsets.push(v);
        v += period_v;
    }
    let mocap_onsets: Vec<i64> = video_onsets
        .iter()
        .map(|&v| (spec.offset_mocap_frames + true_rate * v as f64).round() as i64)
        .collect();
    let n_mocap = (spec.offset_mocap_frames + true_rate * n_video as f64).ceil().max(1.0) as usize + 50;

    let deleted_video = pick_deleted(video_onsets.len(), spec.delete_fraction, rng);
    let deleted_mocap = pick_deleted(mocap_onsets.len(), spec.delete_fraction, rng);

    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut level = vec![spec.baseline; n_video];
    for (i, &v) in video_onsets.iter().enumerate() {
        if deleted_video.binary_search(&i).is_ok() {
            continue;
        }
        for l in level.iter_mut().skip(v as usize).take(on_v) {
            *l = spec.on_level;
        }
    }
    let values = level
        .into_iter()
        .map(|l| (l + noise.sample(rng)).clamp(0.0, 255.0))
        .collect();

    let mut counts = vec![4u32; n_mocap];
    for (i, &m) in mocap_onsets.iter().enumerate() {
        if deleted_mocap.binary_search(&i).is_ok() || m < 1 || m as usize >= n_mocap {
            continue;
        }
        for c in counts.iter_mut().skip(m as usize).take(on_m) {
            *c = 6;
        }
        if rng.random_bool(spec.transition_probability.clamp(0.0, 1.0)) {
            counts[m as usize - 1] = 5;
        }
    }

    FlashTraces {
        video: IntensitySignal {
            first_frame: 0,
            values,
            frame_rate: NOMINAL_VIDEO_RATE,
        },
        mocap: MarkerCountSignal {
            first_frame: 0,
            counts,
            frame_rate: NOMINAL_MOCAP_RATE,
        },
        true_rate,
        video_onsets,
        mocap_onsets,
        deleted_video,
        deleted_mocap,
    }
}
