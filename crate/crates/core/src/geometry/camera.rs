use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pixel, Point3, RigidTransform};

/// Brown–Conrady coefficients in OpenCV order `k1, k2, p1, p2, k3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_array(c: [f64; 5]) -> Self {
        Self {
            k1: c[0],
            k2: c[1],
            p1: c[2],
            p2: c[3],
            k3: c[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|c| *c == 0.0)
    }

    /// Maps undistorted normalized coordinates to distorted ones.
    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Jacobian of [`Distortion::apply`] with respect to its input.
    pub fn jacobian(&self, p: Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * r2 * self.k3);
        let dxx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let dxy = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dyx = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dyy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x;
        Matrix2::new(dxx, dxy, dyx, dyy)
    }

    /// Inverts the distortion by Newton iteration, seeded with the usual fixed-point guess.
    pub fn remove(&self, distorted: Vector2<f64>) -> Vector2<f64> {
        if self.is_zero() {
            return distorted;
        }
        let mut p = distorted;
        for _ in 0..5 {
            let r2 = p.norm_squared();
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let tangential = self.apply(p) - p * radial;
            p = (distorted - tangential) / radial;
        }
        for _ in 0..50 {
            let err = self.apply(p) - distorted;
            if err.amax() < 1e-15 {
                break;
            }
            match self.jacobian(p).try_inverse() {
                Some(inv) => p -= inv * err,
                None => break,
            }
        }
        p
    }
}

/// Everything about a camera that does not depend on where it stands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let vals = [self.fx, self.fy, self.cx, self.cy];
        if !vals
            .iter()
            .chain(self.distortion.to_array().iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be positive"));
        }
        if self.cx < 0.0 || self.cy < 0.0 || self.cx > f64::from(self.width) || self.cy > f64::from(self.height) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(())
    }

    /// Normalized (undistorted) image coordinates of a pixel.
    pub fn normalize(&self, px: &Pixel) -> Vector2<f64> {
        let distorted = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        self.distortion.remove(distorted)
    }

    pub fn denormalize(&self, n: Vector2<f64>) -> Pixel {
        let d = self.distortion.apply(n);
        Pixel::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    pub fn in_bounds(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < f64::from(self.width) && px.y < f64::from(self.height)
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    /// In front of the camera and inside the image.
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// world → camera, millimeters.
    pub extrinsic: RigidTransform,
}

const MIN_DEPTH: f64 = 1e-12;

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsic: RigidTransform) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, extrinsic })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        self.extrinsic.inverse().apply(&Point3::origin())
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        self.extrinsic.apply(p)
    }

    /// Pixel of a point already in camera coordinates; depth is clamped away from zero.
    pub fn project_camera_point(&self, pc: &Point3) -> Pixel {
        let z = if pc.z.abs() < MIN_DEPTH {
            MIN_DEPTH.copysign(pc.z)
        } else {
            pc.z
        };
        self.intrinsics.denormalize(Vector2::new(pc.x / z, pc.y / z))
    }

    pub fn project(&self, p: &Point3) -> Result<Projection, GeometryError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let pc = self.to_camera(p);
        let pixel = self.project_camera_point(&pc);
        let visible = pc.z > 0.0 && pixel.iter().all(|v| v.is_finite()) && self.intrinsics.in_bounds(&pixel);
        Ok(Projection { pixel, visible })
    }

    /// d(pixel)/d(camera-frame point).
    pub fn projection_jacobian_camera(&self, pc: &Point3) -> Matrix2x3<f64> {
        let z = if pc.z.abs() < MIN_DEPTH {
            MIN_DEPTH.copysign(pc.z)
        } else {
            pc.z
        };
        let n = Vector2::new(pc.x / z, pc.y / z);
        let dn = Matrix2x3::new(1.0 / z, 0.0, -pc.x / (z * z), 0.0, 1.0 / z, -pc.y / (z * z));
        let dd = self.intrinsics.distortion.jacobian(n);
        let f = Matrix2::new(self.intrinsics.fx, 0.0, 0.0, self.intrinsics.fy);
        f * dd * dn
    }

    /// d(pixel)/d(world point).
    pub fn projection_jacobian_world(&self, p: &Point3) -> Matrix2x3<f64> {
        self.projection_jacobian_camera(&self.to_camera(p)) * self.extrinsic.rotation()
    }

    /// Unit direction, in world coordinates, of the ray through a pixel.
    pub fn ray_direction(&self, px: &Pixel) -> Vector3<f64> {
        let n = self.intrinsics.normalize(px);
        (self.extrinsic.rotation().transpose() * Vector3::new(n.x, n.y, 1.0)).normalize()
    }

    /// World point on the ray through `px` with camera-frame depth `depth` (mm).
    pub fn unproject(&self, px: &Pixel, depth: f64) -> Point3 {
        let n = self.intrinsics.normalize(px);
        let pc = Point3::new(n.x * depth, n.y * depth, depth);
        self.extrinsic.inverse().apply(&pc)
    }
}
