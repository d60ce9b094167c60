//! C ABI over roadforge.
//!
//! Every function returns an [`RfStatus`]. On failure a message is kept per
//! thread and can be copied out with [`rf_last_error_message`]. Panics never
//! cross the boundary; they surface as `RF_STATUS_PANIC`.
//!
//! Matrices are row-major `double[9]`. Poses map world to camera:
//! `x_cam = R * x_world + t`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use roadforge::annotate::{read_manifest, DatasetManifest};
use roadforge::background::median_background;
use roadforge::eval::{evaluate_gt, ground_truth_of, GroundTruth, THRESHOLDS};
use roadforge::geometry::{
    estimate_homography, image_to_ground, pose_to_ground_homography, project_point, solve_pnp, CameraIntrinsics,
    CameraPose, GeometryError, Homography, LandmarkCorrespondence, SolveOptions,
};
use roadforge::localize::Detection;
use roadforge::ImageBuffer;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    NoConvergence = 4,
    BehindCamera = 5,
    AtInfinity = 6,
    DimensionMismatch = 7,
    Io = 8,
    UnknownImage = 9,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// Per-threshold and headline metrics. Thresholds are 2, 5, 10, 15, 20 and
/// 50 px, in that order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RfEvalSummary {
    pub ap: [f64; 6],
    pub recall: [f64; 6],
    pub map: f64,
    pub ap20: f64,
    pub ap50: f64,
    pub ar: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

/// Opaque dataset manifest.
pub struct RfManifest {
    inner: DatasetManifest,
}

/// Opaque evaluator: ground truth plus accumulated detections.
pub struct RfEvaluator {
    gt: GroundTruth,
    dets: Vec<Detection>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(RfStatus, String);

impl From<GeometryError> for Fail {
    fn from(e: GeometryError) -> Self {
        let code = match e {
            GeometryError::DegenerateConfiguration(_) => RfStatus::Degenerate,
            GeometryError::NoConvergence { .. } => RfStatus::NoConvergence,
            GeometryError::PointBehindCamera { .. } => RfStatus::BehindCamera,
            GeometryError::PointAtInfinity => RfStatus::AtInfinity,
            _ => RfStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RfStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(RfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn intrinsics(k: &RfIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?)
}

fn pose(p: &RfPose) -> Result<CameraPose, Fail> {
    Ok(CameraPose::new(Matrix3::from_row_slice(&p.rotation), Vector3::from(p.translation))?)
}

fn write_matrix(m: &Matrix3<f64>, out: &mut [f64; 9]) {
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = m[(i, j)];
        }
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the buffer size needed for the
/// full message including the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Projects a world point to pixels.
///
/// # Safety
/// All pointers must be valid; `world` holds 3 and `out_pixel` 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_project_point(
    k: *const RfIntrinsics,
    pose_in: *const RfPose,
    world: *const f64,
    out_pixel: *mut f64,
) -> RfStatus {
    guard(|| {
        let k = intrinsics(deref(k, "k")?)?;
        let pose = pose(deref(pose_in, "pose")?)?;
        let w = slice(world, 3, "world")?;
        let out = slice_mut(out_pixel, 2, "out_pixel")?;
        let p = project_point(&k, &pose, &Vector3::new(w[0], w[1], w[2]))?;
        out.copy_from_slice(&[p.x, p.y]);
        Ok(())
    })
}

/// Solves a camera pose from `n` correspondences. `world` holds `3n`
/// doubles, `pixels` `2n`. `out_errors` (optional, `n` doubles) receives
/// per-landmark reprojection errors, infinity for landmarks behind the
/// camera.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out_rms` and
/// `out_errors` may be null.
#[no_mangle]
pub unsafe extern "C" fn rf_solve_pnp(
    k: *const RfIntrinsics,
    world: *const f64,
    pixels: *const f64,
    n: usize,
    out_pose: *mut RfPose,
    out_rms: *mut f64,
    out_errors: *mut f64,
) -> RfStatus {
    guard(|| {
        let k = intrinsics(deref(k, "k")?)?;
        let w = slice(world, n * 3, "world")?;
        let px = slice(pixels, n * 2, "pixels")?;
        let out_pose = out_pose.as_mut().ok_or_else(|| null("out_pose"))?;
        let corrs: Vec<LandmarkCorrespondence> = (0..n)
            .map(|i| {
                LandmarkCorrespondence::new(
                    format!("P{}", i + 1),
                    Vector3::new(w[3 * i], w[3 * i + 1], w[3 * i + 2]),
                    Vector2::new(px[2 * i], px[2 * i + 1]),
                )
            })
            .collect();
        let sol = solve_pnp(&k, &corrs, &SolveOptions::default())?;
        let mut r = [0.0; 9];
        write_matrix(sol.pose.rotation(), &mut r);
        let t = sol.pose.translation();
        *out_pose = RfPose { rotation: r, translation: [t.x, t.y, t.z] };
        if let Some(rms) = out_rms.as_mut() {
            *rms = sol.rms_error;
        }
        if !out_errors.is_null() {
            slice_mut(out_errors, n, "out_errors")?.copy_from_slice(&sol.per_landmark_error);
        }
        Ok(())
    })
}

/// Fits a pixel-to-ground homography from `n >= 4` pairs (`2n` doubles
/// each). The result has unit Frobenius norm.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out_h` holds 9 doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_estimate_homography(
    pixels: *const f64,
    ground: *const f64,
    n: usize,
    out_h: *mut [f64; 9],
) -> RfStatus {
    guard(|| {
        let px = slice(pixels, 2 * n, "pixels")?;
        let g = slice(ground, 2 * n, "ground")?;
        let out = out_h.as_mut().ok_or_else(|| null("out_h"))?;
        let pairs: Vec<_> = (0..n)
            .map(|i| (Vector2::new(px[2 * i], px[2 * i + 1]), Vector2::new(g[2 * i], g[2 * i + 1])))
            .collect();
        write_matrix(estimate_homography(&pairs)?.matrix(), out);
        Ok(())
    })
}

/// Pixel-to-ground homography of the `z = 0` plane for a calibrated camera.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rf_pose_to_ground_homography(
    k: *const RfIntrinsics,
    pose_in: *const RfPose,
    out_h: *mut [f64; 9],
) -> RfStatus {
    guard(|| {
        let k = intrinsics(deref(k, "k")?)?;
        let pose = pose(deref(pose_in, "pose")?)?;
        let out = out_h.as_mut().ok_or_else(|| null("out_h"))?;
        write_matrix(pose_to_ground_homography(&k, &pose)?.matrix(), out);
        Ok(())
    })
}

/// Maps a pixel to ground coordinates with homography `h`.
///
/// # Safety
/// `h` holds 9 doubles, `pixel` and `out_ground` 2 each.
#[no_mangle]
pub unsafe extern "C" fn rf_image_to_ground(h: *const [f64; 9], pixel: *const f64, out_ground: *mut f64) -> RfStatus {
    guard(|| {
        let m = Matrix3::from_row_slice(deref(h, "h")?);
        let hom = Homography::new(m)?;
        let p = slice(pixel, 2, "pixel")?;
        let out = slice_mut(out_ground, 2, "out_ground")?;
        let g = image_to_ground(&hom, &Vector2::new(p[0], p[1]))?;
        out.copy_from_slice(&[g.x, g.y]);
        Ok(())
    })
}

/// Per-pixel median of `n` RGB8 frames of `width * height` pixels each.
/// Even counts take the lower median.
///
/// # Safety
/// `frames` holds `n` pointers each valid for `width * height * 3` bytes;
/// `out` is valid for the same number of bytes.
#[no_mangle]
pub unsafe extern "C" fn rf_median_background(
    frames: *const *const u8,
    n: usize,
    width: u32,
    height: u32,
    out: *mut u8,
) -> RfStatus {
    guard(|| {
        if n == 0 {
            return Err(Fail(RfStatus::InvalidArgument, "no frames".into()));
        }
        let len = width as usize * height as usize * 3;
        let ptrs = slice(frames, n, "frames")?;
        let images = ptrs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let data = slice(p, len, &format!("frame {i}"))?.to_vec();
                ImageBuffer::from_raw(width, height, data).map_err(|e| Fail(RfStatus::DimensionMismatch, e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let med = median_background(&images).map_err(|e| Fail(RfStatus::DimensionMismatch, e.to_string()))?;
        slice_mut(out, len, "out")?.copy_from_slice(med.as_raw());
        Ok(())
    })
}

/// Loads a dataset manifest. Free with [`rf_manifest_free`].
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn rf_manifest_load(path: *const c_char, out: *mut *mut RfManifest) -> RfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = read_manifest(Path::new(path)).map_err(|e| Fail(RfStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(RfManifest { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` is null or was returned by [`rf_manifest_load`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rf_manifest_free(m: *mut RfManifest) {
    if !m.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(m))));
    }
}

/// # Safety
/// `m` is a live manifest handle; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn rf_manifest_image_count(m: *const RfManifest, out: *mut usize) -> RfStatus {
    guard(|| {
        let m = deref(m, "manifest")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.images.len();
        Ok(())
    })
}

/// New evaluator with no images. Free with [`rf_evaluator_free`].
///
/// # Safety
/// `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_new(out: *mut *mut RfEvaluator) -> RfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Box::into_raw(Box::new(RfEvaluator { gt: GroundTruth::new(), dets: Vec::new() }));
        Ok(())
    })
}

/// Evaluator whose ground truth is taken from a manifest.
///
/// # Safety
/// `m` is a live manifest handle; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_from_manifest(m: *const RfManifest, out: *mut *mut RfEvaluator) -> RfStatus {
    guard(|| {
        let m = deref(m, "manifest")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Box::into_raw(Box::new(RfEvaluator { gt: ground_truth_of(&m.inner), dets: Vec::new() }));
        Ok(())
    })
}

/// Adds a ground-truth bottom center, registering the image if new.
///
/// # Safety
/// `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_add_ground_truth(ev: *mut RfEvaluator, image_id: *const c_char, u: f64, v: f64) -> RfStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        let id = str_arg(image_id, "image_id")?;
        if !(u.is_finite() && v.is_finite()) {
            return Err(Fail(RfStatus::InvalidArgument, "ground truth must be finite".into()));
        }
        ev.gt.entry(id.to_string()).or_default().push([u, v]);
        Ok(())
    })
}

/// Registers an image with no ground truth.
///
/// # Safety
/// `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_add_image(ev: *mut RfEvaluator, image_id: *const c_char) -> RfStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        ev.gt.entry(str_arg(image_id, "image_id")?.to_string()).or_default();
        Ok(())
    })
}

/// Adds a detection. The image must already be known to the evaluator.
///
/// # Safety
/// `ev` is a live evaluator; `image_id` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_add_detection(
    ev: *mut RfEvaluator,
    image_id: *const c_char,
    u: f64,
    v: f64,
    score: f64,
) -> RfStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        let id = str_arg(image_id, "image_id")?;
        if !ev.gt.contains_key(id) {
            return Err(Fail(RfStatus::UnknownImage, format!("unknown image id {id:?}")));
        }
        let det = Detection { image_id: id.to_string(), bottom_center: [u, v], score, r#box: None };
        det.validate().map_err(|m| Fail(RfStatus::InvalidArgument, m))?;
        ev.dets.push(det);
        Ok(())
    })
}

/// Computes metrics over everything added so far.
///
/// # Safety
/// `ev` is a live evaluator; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_compute(ev: *const RfEvaluator, out: *mut RfEvalSummary) -> RfStatus {
    guard(|| {
        let ev = deref(ev, "evaluator")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate_gt(&ev.gt, &ev.dets).map_err(|e| Fail(RfStatus::UnknownImage, e.to_string()))?;
        let mut s = RfEvalSummary {
            map: r.map,
            ap20: r.ap20,
            ap50: r.ap50,
            ar: r.ar,
            n_gt: r.counts.n_gt,
            n_det: r.counts.n_det,
            ..Default::default()
        };
        for (i, t) in THRESHOLDS.iter().enumerate() {
            s.ap[i] = r.ap_per_threshold[t];
            s.recall[i] = r.recall_per_threshold[t];
        }
        *out = s;
        Ok(())
    })
}

/// # Safety
/// `ev` is null or a live evaluator handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rf_evaluator_free(ev: *mut RfEvaluator) {
    if !ev.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(ev))));
    }
}
