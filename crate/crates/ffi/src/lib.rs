//! C ABI over the geometry, propagation and outlier primitives.
//!
//! Every function returns an [`MpStatus`]; on failure [`mp_last_error_message`] describes
//! the cause. Transforms cross the boundary as 12 doubles: a row-major 3×3 rotation
//! followed by the translation. Points are packed `x, y, z` triples and pixels `u, v`
//! pairs. Handles are owned by the caller and released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;
use std::sync::OnceLock;

use markerprop::annotate::{bounding_box, propagate_frame, KeypointId, KeypointTemplate};
use markerprop::geometry::{
    rigid_fit, solve_pnp, triangulate, CameraModel, Distortion, GeometryError, Intrinsics, NamedCamera, Pixel, Point3,
    RigidTransform, TriangulationOptions,
};
use markerprop::qc::{gesd_outliers, QcError};

/// Number of keypoints per individual, in the fixed keypoint order.
pub const MP_KEYPOINT_COUNT: usize = 9;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    Degenerate = 4,
    ParseError = 5,
    BufferTooSmall = 6,
    Empty = 7,
    Panic = 8,
}

/// Pinhole intrinsics with Brown–Conrady distortion `k1, k2, p1, p2, k3`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MpIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: [f64; 5],
    pub width: u32,
    pub height: u32,
}

/// Opaque camera: intrinsics plus world → camera extrinsic.
pub struct MpCamera(CameraModel);

/// Opaque keypoint template parsed from its JSON file.
pub struct MpTemplate(KeypointTemplate);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(MpStatus, String);

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        let status = match e {
            GeometryError::NonFinite => MpStatus::NonFinite,
            GeometryError::DegenerateConfiguration(_) | GeometryError::DegenerateGeometry(_) => MpStatus::Degenerate,
            _ => MpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<QcError> for Failure {
    fn from(e: QcError) -> Self {
        Failure(MpStatus::InvalidArgument, e.to_string())
    }
}

fn fail(status: MpStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records the error message and maps panics to [`MpStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MpStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (MpStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (MpStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

/// # Safety
/// `ptr` must be null or valid for reads of `len` elements.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(MpStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for writes of `len` elements.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(fail(MpStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn points(flat: &[f64]) -> Vec<Point3> {
    flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

fn pixels(flat: &[f64]) -> Vec<Pixel> {
    flat.chunks_exact(2).map(|c| Pixel::new(c[0], c[1])).collect()
}

/// # Safety
/// `ptr` must be null or point to 12 readable doubles.
unsafe fn transform(ptr: *const f64, what: &str) -> Result<RigidTransform, Failure> {
    let v: &[f64; 12] = input(ptr, 12, what)?.try_into().expect("12 values");
    Ok(RigidTransform::from_flat12(v)?)
}

impl From<&MpIntrinsics> for Intrinsics {
    fn from(k: &MpIntrinsics) -> Self {
        Intrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            distortion: Distortion::from_array(k.distortion),
            width: k.width,
            height: k.height,
        }
    }
}

/// Copies the message of the last failed call on this thread into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for writes of `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Least-squares rigid transform mapping `source` onto `target` (`n` points each).
/// Writes the transform (12 doubles) and the RMS residual in millimeters.
///
/// # Safety
/// `source` and `target` must hold `3 * n` doubles, `out_transform` 12 and `out_rms` 1.
#[no_mangle]
pub unsafe extern "C" fn mp_rigid_fit(
    source: *const f64,
    target: *const f64,
    n: usize,
    out_transform: *mut f64,
    out_rms: *mut f64,
) -> MpStatus {
    guard(|| {
        let s = points(input(source, 3 * n, "source")?);
        let t = points(input(target, 3 * n, "target")?);
        let out = output(out_transform, 12, "out_transform")?;
        let rms = output(out_rms, 1, "out_rms")?;
        let (fit, r) = rigid_fit(&s, &t)?;
        out.copy_from_slice(&fit.to_flat12());
        rms[0] = r;
        Ok(())
    })
}

/// Creates a camera from intrinsics and a world → camera extrinsic (12 doubles).
///
/// # Safety
/// `intrinsics` must point to a valid struct, `extrinsic` to 12 doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_camera_new(
    intrinsics: *const MpIntrinsics,
    extrinsic: *const f64,
    out: *mut *mut MpCamera,
) -> MpStatus {
    guard(|| {
        let k = intrinsics
            .as_ref()
            .ok_or(fail(MpStatus::NullPointer, "intrinsics is null"))?;
        let ext = transform(extrinsic, "extrinsic")?;
        let slot = output(out, 1, "out")?;
        let model = CameraModel::new(k.into(), ext)?;
        slot[0] = Box::into_raw(Box::new(MpCamera(model)));
        Ok(())
    })
}

/// Releases a camera. Null is ignored.
///
/// # Safety
/// `camera` must be null or a handle from [`mp_camera_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_camera_free(camera: *mut MpCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Camera center in world coordinates.
///
/// # Safety
/// `camera` must be a live handle and `out_center` hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_camera_center(camera: *const MpCamera, out_center: *mut f64) -> MpStatus {
    guard(|| {
        let cam = camera.as_ref().ok_or(fail(MpStatus::NullPointer, "camera is null"))?;
        let c = cam.0.center();
        output(out_center, 3, "out_center")?.copy_from_slice(&[c.x, c.y, c.z]);
        Ok(())
    })
}

/// Projects `n` world points. Writes `2 * n` pixel coordinates and, per point, 1 when it is
/// in front of the camera and inside the image.
///
/// # Safety
/// `camera` must be a live handle, `world` hold `3 * n` doubles, `out_pixels` `2 * n` and
/// `out_visible` `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_project(
    camera: *const MpCamera,
    world: *const f64,
    n: usize,
    out_pixels: *mut f64,
    out_visible: *mut u8,
) -> MpStatus {
    guard(|| {
        let cam = camera.as_ref().ok_or(fail(MpStatus::NullPointer, "camera is null"))?;
        let pts = points(input(world, 3 * n, "world")?);
        let px = output(out_pixels, 2 * n, "out_pixels")?;
        let vis = output(out_visible, n, "out_visible")?;
        for (i, p) in pts.iter().enumerate() {
            let proj = cam.0.project(p)?;
            px[2 * i] = proj.pixel.x;
            px[2 * i + 1] = proj.pixel.y;
            vis[i] = proj.visible as u8;
        }
        Ok(())
    })
}

/// Triangulates one point from `n` views: `cameras[i]` observed it at pixel
/// `pixels[2i], pixels[2i + 1]`. Fails as degenerate when no two rays are at least
/// `min_ray_angle_deg` apart. Writes the point and the RMS reprojection error in pixels.
///
/// # Safety
/// `cameras` must hold `n` live handles, `pixels` `2 * n` doubles, `out_point` 3 and
/// `out_rms` 1.
#[no_mangle]
pub unsafe extern "C" fn mp_triangulate(
    cameras: *const *const MpCamera,
    pixels_in: *const f64,
    n: usize,
    min_ray_angle_deg: f64,
    out_point: *mut f64,
    out_rms: *mut f64,
) -> MpStatus {
    guard(|| {
        let cams = input(cameras, n, "cameras")?;
        let px = pixels(input(pixels_in, 2 * n, "pixels")?);
        let out = output(out_point, 3, "out_point")?;
        let rms = output(out_rms, 1, "out_rms")?;
        let mut views = Vec::with_capacity(n);
        for (c, p) in cams.iter().zip(px) {
            let cam = c.as_ref().ok_or(fail(MpStatus::NullPointer, "camera is null"))?;
            views.push((&cam.0, p));
        }
        if !(min_ray_angle_deg.is_finite() && min_ray_angle_deg >= 0.0) {
            return Err(fail(
                MpStatus::InvalidArgument,
                "min_ray_angle_deg must be finite and >= 0",
            ));
        }
        let opts = TriangulationOptions {
            min_ray_angle_deg,
            ..TriangulationOptions::default()
        };
        let t = triangulate(&views, &opts)?;
        out.copy_from_slice(&[t.point.x, t.point.y, t.point.z]);
        rms[0] = t.rms_px;
        Ok(())
    })
}

/// Camera pose from `n >= 6` world/pixel correspondences. Writes the world → camera
/// extrinsic (12 doubles) and the RMS reprojection error in pixels.
///
/// # Safety
/// `world` must hold `3 * n` doubles, `pixels` `2 * n`, `intrinsics` a valid struct,
/// `out_extrinsic` 12 doubles and `out_rms` 1.
#[no_mangle]
pub unsafe extern "C" fn mp_solve_pnp(
    world: *const f64,
    pixels_in: *const f64,
    n: usize,
    intrinsics: *const MpIntrinsics,
    out_extrinsic: *mut f64,
    out_rms: *mut f64,
) -> MpStatus {
    guard(|| {
        let w = points(input(world, 3 * n, "world")?);
        let px = pixels(input(pixels_in, 2 * n, "pixels")?);
        let k = intrinsics
            .as_ref()
            .ok_or(fail(MpStatus::NullPointer, "intrinsics is null"))?;
        let out = output(out_extrinsic, 12, "out_extrinsic")?;
        let rms = output(out_rms, 1, "out_rms")?;
        let k: Intrinsics = k.into();
        k.validate()?;
        let s = solve_pnp(&w, &px, &k)?;
        out.copy_from_slice(&s.extrinsic.to_flat12());
        rms[0] = s.rms_px;
        Ok(())
    })
}

/// Parses a template from its JSON text (UTF-8, NUL-terminated).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mp_template_from_json(json: *const c_char, out: *mut *mut MpTemplate) -> MpStatus {
    guard(|| {
        if json.is_null() {
            return Err(fail(MpStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(MpStatus::ParseError, e.to_string()))?;
        let slot = output(out, 1, "out")?;
        let t: KeypointTemplate = serde_json::from_str(text).map_err(|e| fail(MpStatus::ParseError, e.to_string()))?;
        if !t.is_complete() {
            return Err(fail(
                MpStatus::InvalidArgument,
                "template lacks a sample for some keypoint",
            ));
        }
        slot[0] = Box::into_raw(Box::new(MpTemplate(t)));
        Ok(())
    })
}

/// Releases a template. Null is ignored.
///
/// # Safety
/// `template` must be null or a handle from [`mp_template_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_template_free(template: *mut MpTemplate) {
    if !template.is_null() {
        drop(Box::from_raw(template));
    }
}

/// Places the template's keypoints with the given head and backpack poses (local → world,
/// 12 doubles each) and projects them into `n_cameras` cameras. Keypoints follow the fixed
/// order given by [`mp_keypoint_name`]. Writes 27 world coordinates, then per camera 18 pixel coordinates and 9
/// visibility flags. `out_bboxes` may be null; otherwise it receives per camera
/// `x_min, y_min, x_max, y_max` of the visible keypoints with the 60 px margin, or NaNs
/// when none is visible.
///
/// # Safety
/// `template` must be a live handle, `head_pose` and `backpack_pose` hold 12 doubles,
/// `cameras` `n_cameras` live handles, `out_world` 27 doubles, `out_pixels`
/// `18 * n_cameras`, `out_visible` `9 * n_cameras` bytes and `out_bboxes`, when not null,
/// `4 * n_cameras` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_propagate(
    template: *const MpTemplate,
    head_pose: *const f64,
    backpack_pose: *const f64,
    cameras: *const *const MpCamera,
    n_cameras: usize,
    out_world: *mut f64,
    out_pixels: *mut f64,
    out_visible: *mut u8,
    out_bboxes: *mut f64,
) -> MpStatus {
    guard(|| {
        let tpl = template
            .as_ref()
            .ok_or(fail(MpStatus::NullPointer, "template is null"))?;
        let head = transform(head_pose, "head_pose")?;
        let backpack = transform(backpack_pose, "backpack_pose")?;
        let mut cams = Vec::with_capacity(n_cameras);
        for (i, c) in input(cameras, n_cameras, "cameras")?.iter().enumerate() {
            let cam = c.as_ref().ok_or(fail(MpStatus::NullPointer, "camera is null"))?;
            cams.push(NamedCamera {
                id: i.to_string(),
                model: cam.0,
            });
        }
        let world = output(out_world, 3 * MP_KEYPOINT_COUNT, "out_world")?;
        let px = output(out_pixels, 2 * MP_KEYPOINT_COUNT * n_cameras, "out_pixels")?;
        let vis = output(out_visible, MP_KEYPOINT_COUNT * n_cameras, "out_visible")?;
        let mut boxes = if out_bboxes.is_null() {
            None
        } else {
            Some(output(out_bboxes, 4 * n_cameras, "out_bboxes")?)
        };

        let frame = propagate_frame(&tpl.0, Some(&head), Some(&backpack), &cams);
        if !frame.valid {
            return Err(fail(MpStatus::InvalidArgument, "template is incomplete"));
        }
        for (k, p) in frame.keypoints3d.iter().enumerate() {
            world[3 * k..3 * k + 3].copy_from_slice(&[p.x, p.y, p.z]);
        }
        for (c, view) in frame.views.iter().enumerate() {
            for k in 0..MP_KEYPOINT_COUNT {
                let i = c * MP_KEYPOINT_COUNT + k;
                px[2 * i] = view.pixels[k].x;
                px[2 * i + 1] = view.pixels[k].y;
                vis[i] = view.visible[k] as u8;
            }
            if let Some(b) = boxes.as_deref_mut() {
                let v = view
                    .bbox
                    .map_or([f64::NAN; 4], |b| [b.x_min, b.y_min, b.x_max, b.y_max]);
                b[4 * c..4 * c + 4].copy_from_slice(&v);
            }
        }
        Ok(())
    })
}

/// Bounding box of `n` pixels grown by `margin` on every side and clipped to a
/// `width × height` image. Writes `x_min, y_min, x_max, y_max`; [`MpStatus::Empty`] when
/// `n` is 0.
///
/// # Safety
/// `pixels` must hold `2 * n` doubles and `out_bbox` 4.
#[no_mangle]
pub unsafe extern "C" fn mp_bbox(
    pixels_in: *const f64,
    n: usize,
    width: u32,
    height: u32,
    margin: f64,
    out_bbox: *mut f64,
) -> MpStatus {
    guard(|| {
        let px = pixels(input(pixels_in, 2 * n, "pixels")?);
        let out = output(out_bbox, 4, "out_bbox")?;
        if px.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) || !margin.is_finite() {
            return Err(fail(MpStatus::NonFinite, "non-finite pixel or margin"));
        }
        let b = bounding_box(&px, width, height, margin).ok_or(fail(MpStatus::Empty, "no pixels"))?;
        out.copy_from_slice(&[b.x_min, b.y_min, b.x_max, b.y_max]);
        Ok(())
    })
}

/// Generalized ESD outlier test on `n > 10` values with at most
/// `ceil(max_outlier_fraction * n)` outliers at significance `alpha`. Writes the outlier
/// indices in removal order, most extreme first, into `out_indices` and their number
/// into `out_count`. [`MpStatus::BufferTooSmall`] when more than `capacity` were found;
/// `out_count` still receives the number needed.
///
/// # Safety
/// `values` must hold `n` doubles, `out_indices` `capacity` elements and `out_count` 1.
#[no_mangle]
pub unsafe extern "C" fn mp_gesd(
    values: *const f64,
    n: usize,
    max_outlier_fraction: f64,
    alpha: f64,
    out_indices: *mut usize,
    capacity: usize,
    out_count: *mut usize,
) -> MpStatus {
    guard(|| {
        let v = input(values, n, "values")?;
        let count = output(out_count, 1, "out_count")?;
        let found = gesd_outliers(v, max_outlier_fraction, alpha)?;
        count[0] = found.len();
        if found.len() > capacity {
            return Err(fail(
                MpStatus::BufferTooSmall,
                format!("{} outliers found, capacity {capacity}", found.len()),
            ));
        }
        if !found.is_empty() {
            output(out_indices, capacity, "out_indices")?[..found.len()].copy_from_slice(&found);
        }
        Ok(())
    })
}

/// Name of keypoint `index` in the fixed order as a static NUL-terminated string, or null
/// when out of range.
#[no_mangle]
pub extern "C" fn mp_keypoint_name(index: usize) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| {
        KeypointId::ALL
            .iter()
            .map(|k| CString::new(k.as_str()).expect("no NUL in keypoint names"))
            .collect()
    });
    names.get(index).map_or(std::ptr::null(), |n| n.as_ptr())
}
