use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, Point3, RigidTransform};

/// Relative singular-value floor below which a point set counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

/// Least-squares rigid alignment (Kabsch, no scale) of `source` onto `target`.
///
/// Returns the transform `T` minimizing `Σ‖T·sᵢ − tᵢ‖²` together with the RMS of the
/// per-point residual distances in millimeters.
pub fn rigid_fit(source: &[Point3], target: &[Point3]) -> Result<(RigidTransform, f64), GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration(
            "rigid fit needs at least three correspondences",
        ));
    }
    if !source.iter().chain(target).all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(GeometryError::NonFinite);
    }

    let n = source.len() as f64;
    let cs = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let ct = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - cs;
        let dt = t.coords - ct;
        cov += ds * dt.transpose();
        spread += ds * ds.transpose();
    }

    let mut sv = spread.symmetric_eigenvalues().as_slice().to_vec();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= sv[0] * COLLINEAR_RATIO {
        return Err(GeometryError::DegenerateConfiguration(
            "points are collinear or coincident",
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = ct - rotation * cs;
    let transform = RigidTransform::from_approximate(rotation, translation);

    let sq: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(s) - t).norm_squared())
        .sum();
    Ok((transform, (sq / n).sqrt()))
}
