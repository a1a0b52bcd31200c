use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use super::lm::{self, LeastSquares};
use super::transform::nearest_rotation;
use super::{CameraModel, GeometryError, Intrinsics, Pixel, Point3, RigidTransform};

pub const MIN_PNP_CORRESPONDENCES: usize = 6;

/// Ratio of the smallest to largest principal standard deviation below which the
/// 3D points count as coplanar for the linear solve.
const COPLANAR_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    /// world → camera.
    pub extrinsic: RigidTransform,
    pub rms_px: f64,
}

/// Camera pose from 2D–3D correspondences: normalized DLT followed by
/// Levenberg–Marquardt over the six pose parameters.
pub fn solve_pnp(world: &[Point3], pixels: &[Pixel], intrinsics: &Intrinsics) -> Result<PnpSolution, GeometryError> {
    if world.len() != pixels.len() {
        return Err(GeometryError::LengthMismatch {
            left: world.len(),
            right: pixels.len(),
        });
    }
    if world.len() < MIN_PNP_CORRESPONDENCES {
        return Err(GeometryError::DegenerateConfiguration(
            "PnP needs at least six correspondences",
        ));
    }
    if !world.iter().all(|p| p.iter().all(|v| v.is_finite())) || !pixels.iter().all(|p| p.iter().all(|v| v.is_finite()))
    {
        return Err(GeometryError::NonFinite);
    }
    intrinsics.validate()?;

    let spread = principal_std_devs(world);
    if spread[0] <= 0.0 || spread[2] < spread[0] * COPLANAR_RATIO {
        return Err(GeometryError::DegenerateConfiguration(
            "3D points are coplanar; the linear pose solve is ambiguous",
        ));
    }

    let normalized: Vec<Vector2<f64>> = pixels.iter().map(|px| intrinsics.normalize(px)).collect();
    let init = dlt_pose(world, &normalized)?;

    let problem = PoseRefinement {
        world,
        pixels,
        intrinsics,
    };
    let (extrinsic, report) = lm::minimize(&problem, init, 200);
    Ok(PnpSolution {
        extrinsic,
        rms_px: (report.cost / world.len() as f64).sqrt(),
    })
}

/// Principal standard deviations of a point cloud, descending.
pub fn principal_std_devs(points: &[Point3]) -> [f64; 3] {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - c;
        a + d * d.transpose()
    }) / n;
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

fn dlt_pose(world: &[Point3], normalized: &[Vector2<f64>]) -> Result<RigidTransform, GeometryError> {
    let n = world.len() as f64;

    let c3 = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let d3 = world.iter().map(|p| (p.coords - c3).norm()).sum::<f64>() / n;
    let s3 = 3f64.sqrt() / d3;
    let c2 = normalized.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let d2 = normalized.iter().map(|p| (p - c2).norm()).sum::<f64>() / n;
    let s2 = if d2 > 0.0 { 2f64.sqrt() / d2 } else { 1.0 };

    let mut a = DMatrix::zeros(2 * world.len(), 12);
    for (k, (p, m)) in world.iter().zip(normalized).enumerate() {
        let x = (p.coords - c3) * s3;
        let h = [x.x, x.y, x.z, 1.0];
        let u = (m.x - c2.x) * s2;
        let v = (m.y - c2.y) * s2;
        for i in 0..4 {
            a[(2 * k, i)] = h[i];
            a[(2 * k, 8 + i)] = -u * h[i];
            a[(2 * k + 1, 4 + i)] = h[i];
            a[(2 * k + 1, 8 + i)] = -v * h[i];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration("svd failed"))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("twelve singular values");
    let h = v_t.row(imin);
    let p_norm = Matrix3x4::from_row_slice(h.transpose().as_slice());

    // undo the conditioning transforms: P = T2⁻¹ · P̃ · T3
    let t3 = Matrix4::new(
        s3,
        0.0,
        0.0,
        -s3 * c3.x, //
        0.0,
        s3,
        0.0,
        -s3 * c3.y, //
        0.0,
        0.0,
        s3,
        -s3 * c3.z, //
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let t2_inv = Matrix3::new(
        1.0 / s2,
        0.0,
        c2.x, //
        0.0,
        1.0 / s2,
        c2.y, //
        0.0,
        0.0,
        1.0,
    );
    let mut p = t2_inv * p_norm * t3;

    let mut m = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let sv = m.singular_values();
    let scale = sv.mean();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GeometryError::DegenerateConfiguration("linear pose solve collapsed"));
    }
    let rotation = nearest_rotation(&(m / scale));
    let translation = p.column(3).into_owned() / scale;
    Ok(RigidTransform::from_approximate(rotation, translation))
}

struct PoseRefinement<'a> {
    world: &'a [Point3],
    pixels: &'a [Pixel],
    intrinsics: &'a Intrinsics,
}

impl LeastSquares for PoseRefinement<'_> {
    type Params = RigidTransform;

    fn linearize(&self, pose: &RigidTransform) -> (DVector<f64>, DMatrix<f64>) {
        let cam = CameraModel {
            intrinsics: *self.intrinsics,
            extrinsic: *pose,
        };
        let n = self.world.len();
        let mut r = DVector::zeros(2 * n);
        let mut j = DMatrix::zeros(2 * n, 6);
        for (k, (p, px)) in self.world.iter().zip(self.pixels).enumerate() {
            let rotated = pose.rotation() * p.coords;
            let pc = Point3::from(rotated + pose.translation());
            let proj = cam.project_camera_point(&pc);
            r[2 * k] = proj.x - px.x;
            r[2 * k + 1] = proj.y - px.y;
            let jp = cam.projection_jacobian_camera(&pc);
            // left perturbation exp(ω)·R: d(pc)/dω = −[R·p]×
            let skew = -rotated.cross_matrix();
            j.view_mut((2 * k, 0), (2, 3)).copy_from(&(jp * skew));
            j.view_mut((2 * k, 3), (2, 3)).copy_from(&jp);
        }
        (r, j)
    }

    fn retract(&self, pose: &RigidTransform, delta: &DVector<f64>) -> RigidTransform {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        pose.perturbed(&omega, &dt)
    }

    fn magnitude(&self, pose: &RigidTransform) -> f64 {
        1.0 + pose.translation().norm()
    }
}
