use nalgebra::{DMatrix, DVector, Matrix3x4, RowVector4, Vector3};

use super::lm::{self, LeastSquares};
use super::{CameraModel, GeometryError, Pixel, Point3};

/// Settings for [`triangulate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationOptions {
    /// Minimum angle (degrees) between any two viewing rays.
    pub min_ray_angle_deg: f64,
    pub max_iterations: usize,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        Self {
            min_ray_angle_deg: 1.0,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Point3,
    /// RMS over observations of the Euclidean reprojection error, pixels.
    pub rms_px: f64,
}

/// Largest angle in degrees between the viewing rays of the observations.
pub fn max_ray_angle_deg(observations: &[(&CameraModel, Pixel)]) -> f64 {
    let rays: Vec<Vector3<f64>> = observations.iter().map(|(cam, px)| cam.ray_direction(px)).collect();
    let mut best: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            let c = rays[i].dot(&rays[j]).clamp(-1.0, 1.0);
            best = best.max(c.acos().to_degrees());
        }
    }
    best
}

/// Multi-view triangulation: DLT initialization refined by Levenberg–Marquardt on the
/// 3D point with the cameras held fixed.
pub fn triangulate(
    observations: &[(&CameraModel, Pixel)],
    options: &TriangulationOptions,
) -> Result<Triangulation, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::DegenerateGeometry(
            "triangulation needs at least two views".into(),
        ));
    }
    if !observations.iter().all(|(_, px)| px.x.is_finite() && px.y.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let centers: Vec<Point3> = observations.iter().map(|(c, _)| c.center()).collect();
    let distinct = centers
        .iter()
        .enumerate()
        .any(|(i, a)| centers[i + 1..].iter().any(|b| (a - b).norm() > 1e-6));
    if !distinct {
        return Err(GeometryError::DegenerateGeometry(
            "all observations share one camera center".into(),
        ));
    }
    let angle = max_ray_angle_deg(observations);
    if angle < options.min_ray_angle_deg {
        return Err(GeometryError::DegenerateGeometry(format!(
            "viewing rays separated by only {angle:.3}° (< {:.3}°)",
            options.min_ray_angle_deg
        )));
    }

    let init = linear_triangulation(observations, &centers)?;
    let problem = PointRefinement { observations };
    let (point, report) = lm::minimize(&problem, init, options.max_iterations);
    Ok(Triangulation {
        point,
        rms_px: (report.cost / observations.len() as f64).sqrt(),
    })
}

fn linear_triangulation(observations: &[(&CameraModel, Pixel)], centers: &[Point3]) -> Result<Point3, GeometryError> {
    // condition the system: world = origin + scale · x'
    let n = centers.len() as f64;
    let origin = centers.iter().fold(Vector3::zeros(), |a, c| a + c.coords) / n;
    let scale = (centers.iter().map(|c| (c.coords - origin).norm()).sum::<f64>() / n).max(1.0);

    let mut a = DMatrix::zeros(2 * observations.len(), 4);
    for (k, (cam, px)) in observations.iter().enumerate() {
        let r = cam.extrinsic.rotation();
        let t = (r * origin + cam.extrinsic.translation()) / scale;
        let p = Matrix3x4::from_columns(&[r.column(0).into(), r.column(1).into(), r.column(2).into(), t]);
        let m = cam.intrinsics.normalize(px);
        let row_x: RowVector4<f64> = p.row(2) * m.x - p.row(0);
        let row_y: RowVector4<f64> = p.row(2) * m.y - p.row(1);
        a.set_row(2 * k, &row_x);
        a.set_row(2 * k + 1, &row_y);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateGeometry("svd failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four singular values");
    let h = v_t.row(imin);
    if h[3].abs() < 1e-12 {
        return Err(GeometryError::DegenerateGeometry(
            "triangulated point at infinity".into(),
        ));
    }
    let x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    Ok(Point3::from(origin + x * scale))
}

struct PointRefinement<'a, 'c> {
    observations: &'a [(&'c CameraModel, Pixel)],
}

impl LeastSquares for PointRefinement<'_, '_> {
    type Params = Point3;

    fn linearize(&self, p: &Point3) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.observations.len();
        let mut r = DVector::zeros(2 * n);
        let mut j = DMatrix::zeros(2 * n, 3);
        for (k, (cam, px)) in self.observations.iter().enumerate() {
            let pc = cam.to_camera(p);
            let proj = cam.project_camera_point(&pc);
            r[2 * k] = proj.x - px.x;
            r[2 * k + 1] = proj.y - px.y;
            let jac = cam.projection_jacobian_camera(&pc) * cam.extrinsic.rotation();
            j.view_mut((2 * k, 0), (2, 3)).copy_from(&jac);
        }
        (r, j)
    }

    fn retract(&self, p: &Point3, delta: &DVector<f64>) -> Point3 {
        Point3::new(p.x + delta[0], p.y + delta[1], p.z + delta[2])
    }

    fn magnitude(&self, p: &Point3) -> f64 {
        p.coords.norm()
    }
}
