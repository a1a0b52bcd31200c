use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point3};

/// Tolerance on orthonormality and determinant accepted by [`RigidTransform::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rigid motion `p -> R p + t` (rotation unitless, translation in millimeters).
///
/// Poses of body parts are stored local→world; camera extrinsics world→camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking `RᵀR = I` and `det R = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let det = rotation.determinant();
        if gram.amax() > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self { rotation, translation })
    }

    /// Projects an almost-rotation onto SO(3) (nearest in Frobenius norm).
    pub fn from_approximate(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nearest_rotation(&rotation),
            translation,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// World→camera extrinsic of a camera at `eye` looking at `target`, with image y pointing
    /// away from `up` (x right, y down, z forward).
    pub fn look_at(eye: &Point3, target: &Point3, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let z = target - eye;
        let x = z.cross(up);
        if z.norm() == 0.0 || x.norm() < 1e-12 * z.norm() * up.norm() {
            return Err(GeometryError::DegenerateGeometry(
                "viewing direction parallel to up".into(),
            ));
        }
        let z = z.normalize();
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            rotation,
            translation: -(rotation * eye.coords),
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads a homogeneous 4×4 matrix; the bottom row must be `[0 0 0 1]`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > ORTHONORMAL_TOL)
        {
            return Err(GeometryError::NotARotation);
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        Self::from_matrix(&Matrix4::from_fn(|r, c| rows[r][c]))
    }

    /// Row-major 3×3 rotation followed by the translation (12 values).
    pub fn to_flat12(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
            out[9 + r] = self.translation[r];
        }
        out
    }

    pub fn from_flat12(v: &[f64; 12]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11]))
    }

    /// Largest absolute difference over the 12 free entries.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }

    /// Frobenius norm of the rotation difference.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation).norm()
    }

    pub fn translation_distance(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Left-multiplies by the exponential of a small rotation and adds a translation step.
    pub(crate) fn perturbed(&self, omega: &Vector3<f64>, dt: &Vector3<f64>) -> RigidTransform {
        let dr = Rotation3::new(*omega).into_inner();
        RigidTransform {
            rotation: nearest_rotation(&(dr * self.rotation)),
            translation: self.translation + dt,
        }
    }
}

/// Closest proper rotation to `m` via SVD.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    matrix: [[f64; 4]; 4],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = GeometryError;

    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        RigidTransform::from_rows(&raw.matrix)
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        RawTransform { matrix: t.to_rows() }
    }
}
