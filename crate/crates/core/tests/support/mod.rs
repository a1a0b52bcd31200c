//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use markerprop::geometry::{CameraModel, Distortion, Intrinsics, NamedCamera, Point3, RigidTransform};
use nalgebra::Vector3;
use rand::Rng;

/// ln Γ(x) by the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn t_pdf(t: f64, df: f64) -> f64 {
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln()).exp()
}

/// P(0 < T < x) by composite Simpson integration of the density.
fn t_half_cdf(x: f64, df: f64) -> f64 {
    let n = 4000;
    let h = x / n as f64;
    let mut s = t_pdf(0.0, df) + t_pdf(x, df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_pdf(i as f64 * h, df);
    }
    s * h / 3.0
}

/// Upper quantile of Student's t: the x with P(T ≤ x) = p, for p > 0.5, by bisection.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    let target = p - 0.5;
    let (mut lo, mut hi) = (0.0, 1.0);
    while t_half_cdf(hi, df) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_half_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn rosner_lambda(n: usize, i: usize, alpha: f64) -> f64 {
    thread_local! {
        static CACHE: std::cell::RefCell<std::collections::HashMap<(usize, u64), f64>> = Default::default();
    }
    let key = (n - i + 1, alpha.to_bits());
    if let Some(v) = CACHE.with(|c| c.borrow().get(&key).copied()) {
        return v;
    }
    let v = rosner_lambda_uncached(n, i, alpha);
    CACHE.with(|c| c.borrow_mut().insert(key, v));
    v
}

fn rosner_lambda_uncached(n: usize, i: usize, alpha: f64) -> f64 {
    let m = (n - i + 1) as f64;
    let p = 1.0 - alpha / (2.0 * m);
    let t = t_quantile(p, m - 2.0);
    (m - 1.0) * t / ((m - 2.0 + t * t) * m).sqrt()
}

/// Textbook GESD: each step recomputes mean and sample deviation over the remaining
/// values and removes the one farthest from the mean. Returns sorted outlier indices.
pub fn rosner_reference(values: &[f64], max_fraction: f64, alpha: f64) -> Vec<usize> {
    let n = values.len();
    let r = (max_fraction * n as f64).ceil() as usize;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut removed = Vec::new();
    let mut last = 0;
    for i in 1..=r {
        let m = remaining.len() as f64;
        let mean = remaining.iter().map(|&k| values[k]).sum::<f64>() / m;
        let sd = (remaining.iter().map(|&k| (values[k] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let (pos, &k) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| (values[*a.1] - mean).abs().total_cmp(&(values[*b.1] - mean).abs()))
            .unwrap();
        if sd == 0.0 {
            break;
        }
        if (values[k] - mean).abs() / sd > rosner_lambda(n, i, alpha) {
            last = i;
        }
        removed.push(k);
        remaining.remove(pos);
    }
    let mut out: Vec<usize> = removed.into_iter().take(last).collect();
    out.sort_unstable();
    out
}

pub fn random_rotation_vector(rng: &mut impl Rng) -> Vector3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 {
        Vector3::z()
    } else {
        axis.normalize()
    };
    axis * rng.random_range(0.0..std::f64::consts::PI)
}

pub fn random_transform(rng: &mut impl Rng, max_t: f64) -> RigidTransform {
    let t = Vector3::new(
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
    );
    RigidTransform::from_axis_angle(random_rotation_vector(rng), t)
}

pub fn intrinsics(distorted: bool) -> Intrinsics {
    Intrinsics {
        fx: 2000.0,
        fy: 2000.0,
        cx: 1920.0,
        cy: 1080.0,
        distortion: if distorted {
            Distortion::from_array([-0.03, 0.005, 2e-4, -1e-4, 0.0])
        } else {
            Distortion::none()
        },
        width: 3840,
        height: 2160,
    }
}

/// Cameras on a ring around the arena centre, looking at it from 2.4 m height.
pub fn ring(n: usize, distorted: bool) -> Vec<NamedCamera> {
    let target = Point3::new(1800.0, 2100.0, 300.0);
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64 + 0.3;
            let eye = Point3::new(1800.0 + 2700.0 * a.cos(), 2100.0 + 2700.0 * a.sin(), 2400.0);
            let ext = RigidTransform::look_at(&eye, &target, &Vector3::z()).unwrap();
            NamedCamera {
                id: format!("cam{i}"),
                model: CameraModel::new(intrinsics(distorted), ext).unwrap(),
            }
        })
        .collect()
}

/// Random point in the central capture volume.
pub fn volume_point(rng: &mut impl Rng) -> Point3 {
    Point3::new(
        rng.random_range(1000.0..2600.0),
        rng.random_range(1200.0..3000.0),
        rng.random_range(0.0..800.0),
    )
}
