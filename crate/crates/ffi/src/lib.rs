//! C ABI over the omnisweep library.
//!
//! Every function returns an [`OsStatus`]; on failure the message is kept
//! per thread and read with [`os_last_error_message`]. Panics are caught at
//! the boundary and reported as [`OsStatus::Panic`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::Vector3;
use omnisweep::camera::{Affine, FisheyeIntrinsics, PixelPoint};
use omnisweep::cost::CostVolume;
use omnisweep::io::RigFile;
use omnisweep::sgm::{compute_metrics, error_map, sgm_aggregate, wta, InverseDepthMap, SgmParams};
use omnisweep::sweep::SphereGrid;
use omnisweep::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments were rejected (bad sizes, values or file contents).
    InvalidArgument = 2,
    /// A numerical routine failed (root solve, divergence, degeneracy).
    Numeric = 3,
    /// Reading a file failed.
    Io = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// Opaque fisheye intrinsics.
pub struct OsIntrinsics {
    inner: FisheyeIntrinsics,
}

/// Opaque calibrated rig.
pub struct OsRig {
    intrinsics: Vec<FisheyeIntrinsics>,
    /// Row-major 3×4 world-to-camera matrices.
    poses: Vec<[f64; 12]>,
}

/// Affine map from normalized to pixel coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OsAffine {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Sphere-sweep grid; latitudes in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OsGrid {
    pub width: usize,
    pub height: usize,
    pub num_spheres: usize,
    pub d_min: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

/// Semi-global matching parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OsSgmParams {
    pub p1: f64,
    pub p2: f64,
    /// 4 or 8 aggregation paths; 0 skips aggregation.
    pub paths: usize,
    /// Nonzero to wrap paths around the longitude seam.
    pub wrap_horizontal: u8,
}

/// Inverse-depth index error statistics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OsDepthMetrics {
    pub pct_gt1: f64,
    pub pct_gt3: f64,
    pub pct_gt5: f64,
    pub mae: f64,
    pub rms: f64,
    pub valid_pixels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_numeric() {
            OsStatus::Numeric
        } else if is_io(&e) {
            OsStatus::Io
        } else {
            OsStatus::InvalidArgument
        };
        Failure(status, e.to_string())
    }
}

fn is_io(e: &Error) -> bool {
    match e {
        Error::Io { .. } => true,
        Error::Context { source, .. } => is_io(source),
        _ => false,
    }
}

fn null(what: &str) -> Failure {
    Failure(OsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(OsStatus::InvalidArgument, message.into())
}

/// Runs `f`, records failures and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            OsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable elements.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null when none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn os_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn os_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates intrinsics from `poly_len` polynomial coefficients, the affine
/// map, the image size and the field of view in degrees.
///
/// # Safety
/// `poly` must point to `poly_len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_intrinsics_new(
    poly: *const f64,
    poly_len: usize,
    affine: OsAffine,
    width: u32,
    height: u32,
    fov_deg: f64,
    out: *mut *mut OsIntrinsics,
) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let poly = slice(poly, poly_len, "poly")?.to_vec();
        let affine = Affine {
            c: affine.c,
            d: affine.d,
            e: affine.e,
            cx: affine.cx,
            cy: affine.cy,
        };
        let inner = FisheyeIntrinsics::new(poly, affine, (width, height), fov_deg)?;
        *out = Box::into_raw(Box::new(OsIntrinsics { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`os_intrinsics_new`] /
/// [`os_rig_intrinsics`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn os_intrinsics_free(handle: *mut OsIntrinsics) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Projects camera-frame point `xyz[3]` to `pixel[2]`; `valid` is set to 1
/// when the point lies within the field of view.
///
/// # Safety
/// `handle` must be live; `xyz`, `pixel` and `valid` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn os_intrinsics_project(handle: *const OsIntrinsics, xyz: *const f64, pixel: *mut f64, valid: *mut u8) -> OsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let x = slice(xyz, 3, "xyz")?;
        let out = slice_mut(pixel, 2, "pixel")?;
        let valid = valid.as_mut().ok_or_else(|| null("valid"))?;
        let (p, ok) = h.inner.project(&Vector3::new(x[0], x[1], x[2]))?;
        out.copy_from_slice(&[p.u, p.v]);
        *valid = u8::from(ok);
        Ok(())
    })
}

/// Lifts `pixel[2]` to the unit ray `ray[3]`; `valid` is set to 1 when the
/// pixel lies within the field of view.
///
/// # Safety
/// `handle` must be live; `pixel`, `ray` and `valid` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn os_intrinsics_unproject(handle: *const OsIntrinsics, pixel: *const f64, ray: *mut f64, valid: *mut u8) -> OsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let p = slice(pixel, 2, "pixel")?;
        let out = slice_mut(ray, 3, "ray")?;
        let valid = valid.as_mut().ok_or_else(|| null("valid"))?;
        let (r, ok) = h.inner.unproject(PixelPoint::new(p[0], p[1]));
        out.copy_from_slice(r.as_vector().as_slice());
        *valid = u8::from(ok);
        Ok(())
    })
}

/// Loads a rig calibration file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_rig_load(path: *const c_char, out: *mut *mut OsRig) -> OsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let file = RigFile::read(Path::new(path))?;
        let poses = file
            .poses()
            .iter()
            .map(|p| {
                let m = p.rotation().into_inner();
                let mut rows = [0.0; 12];
                for r in 0..3 {
                    for c in 0..3 {
                        rows[4 * r + c] = m[(r, c)];
                    }
                    rows[4 * r + 3] = p.t[r];
                }
                rows
            })
            .collect();
        *out = Box::into_raw(Box::new(OsRig {
            intrinsics: file.intrinsics()?,
            poses,
        }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`os_rig_load`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn os_rig_free(handle: *mut OsRig) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of cameras in the rig (0 for a null handle).
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn os_rig_camera_count(handle: *const OsRig) -> usize {
    handle.as_ref().map_or(0, |r| r.intrinsics.len())
}

/// Copies camera `index`'s intrinsics into a new handle.
///
/// # Safety
/// `handle` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_rig_intrinsics(handle: *const OsRig, index: usize, out: *mut *mut OsIntrinsics) -> OsStatus {
    guard(|| {
        let rig = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = rig
            .intrinsics
            .get(index)
            .ok_or_else(|| invalid(format!("camera {index} outside 0..{}", rig.intrinsics.len())))?
            .clone();
        *out = Box::into_raw(Box::new(OsIntrinsics { inner }));
        Ok(())
    })
}

/// Writes camera `index`'s world-to-camera pose as a row-major 3×4 matrix.
///
/// # Safety
/// `handle` must be live; `matrix` must point to 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn os_rig_pose(handle: *const OsRig, index: usize, matrix: *mut f64) -> OsStatus {
    guard(|| {
        let rig = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = slice_mut(matrix, 12, "matrix")?;
        let pose = rig
            .poses
            .get(index)
            .ok_or_else(|| invalid(format!("camera {index} outside 0..{}", rig.poses.len())))?;
        out.copy_from_slice(pose);
        Ok(())
    })
}

fn grid_of(g: &OsGrid) -> Result<SphereGrid, Failure> {
    Ok(SphereGrid::new(g.width, g.height, g.num_spheres, g.d_min, g.phi_min, g.phi_max)?)
}

/// Aggregates a W×H×N cost volume (n-major, row-major slices; costs in
/// [0, 1]) with SGM and writes the winning sphere index per pixel.
/// `valid` flags are 0/1 bytes; invalid output pixels get index 0.
///
/// # Safety
/// `costs` and `valid` must hold W·H·N elements; `index_out` and
/// `valid_out` must hold W·H elements.
#[no_mangle]
pub unsafe extern "C" fn os_sgm_depth(
    grid: OsGrid,
    costs: *const f32,
    valid: *const u8,
    params: OsSgmParams,
    index_out: *mut u32,
    valid_out: *mut u8,
) -> OsStatus {
    guard(|| {
        let grid = grid_of(&grid)?;
        let cells = grid.pixels() * grid.num_spheres;
        let costs = slice(costs, cells, "costs")?;
        let valid = slice(valid, cells, "valid")?;
        let index_out = slice_mut(index_out, grid.pixels(), "index_out")?;
        let valid_out = slice_mut(valid_out, grid.pixels(), "valid_out")?;
        let volume = CostVolume::new(grid, costs.to_vec(), valid.iter().map(|&v| v != 0).collect())?;
        let aggregated = if params.paths == 0 {
            volume
        } else {
            let params = SgmParams {
                p1: params.p1,
                p2: params.p2,
                paths: params.paths,
                wrap_horizontal: params.wrap_horizontal != 0,
            };
            sgm_aggregate(&volume, &params)?
        };
        let depth = wta(&aggregated);
        index_out.copy_from_slice(&depth.index);
        for (o, &m) in valid_out.iter_mut().zip(&depth.mask) {
            *o = u8::from(m);
        }
        Ok(())
    })
}

/// Error statistics of predicted against ground-truth sphere indices over
/// pixels valid in both maps.
///
/// # Safety
/// All four arrays must hold W·H elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_depth_metrics(
    grid: OsGrid,
    pred_index: *const u32,
    pred_valid: *const u8,
    gt_index: *const u32,
    gt_valid: *const u8,
    out: *mut OsDepthMetrics,
) -> OsStatus {
    guard(|| {
        let grid = grid_of(&grid)?;
        let n = grid.pixels();
        let map = |index: *const u32, valid: *const u8, what: &str| -> Result<InverseDepthMap, Failure> {
            let index = slice(index, n, what)?;
            let valid = slice(valid, n, what)?;
            Ok(InverseDepthMap::new(grid, index.to_vec(), valid.iter().map(|&v| v != 0).collect())?)
        };
        let pred = map(pred_index, pred_valid, "prediction")?;
        let gt = map(gt_index, gt_valid, "ground truth")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = compute_metrics(&error_map(&pred, &gt)?)?;
        *out = OsDepthMetrics {
            pct_gt1: m.pct_gt1,
            pct_gt3: m.pct_gt3,
            pct_gt5: m.pct_gt5,
            mae: m.mae,
            rms: m.rms,
            valid_pixels: m.valid_pixels,
        };
        Ok(())
    })
}
