use std::ffi::{CStr, CString};
use std::ptr;

use omnisweep_ffi::*;

const F: f64 = 370.0;

fn lens() -> *mut OsIntrinsics {
    let poly = [F, 0.0, -1.0 / (3.0 * F), 0.0, -1.0 / (45.0 * F * F * F)];
    let affine = OsAffine {
        c: 1.0,
        d: 0.0,
        e: 0.0,
        cx: 800.0,
        cy: 766.0,
    };
    let mut h = ptr::null_mut();
    let status = unsafe { os_intrinsics_new(poly.as_ptr(), poly.len(), affine, 1600, 1532, 220.0, &mut h) };
    assert_eq!(status, OsStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = os_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn project_unproject_round_trip() {
    let h = lens();
    let x = [0.3, -0.2, 0.5];
    let mut px = [0.0; 2];
    let mut valid = 0u8;
    assert_eq!(unsafe { os_intrinsics_project(h, x.as_ptr(), px.as_mut_ptr(), &mut valid) }, OsStatus::Ok);
    assert_eq!(valid, 1);
    let mut ray = [0.0; 3];
    assert_eq!(unsafe { os_intrinsics_unproject(h, px.as_ptr(), ray.as_mut_ptr(), &mut valid) }, OsStatus::Ok);
    let n: f64 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    for k in 0..3 {
        assert!((ray[k] - x[k] / n.sqrt()).abs() < 1e-9);
    }
    // Optical axis maps to the distortion center.
    let axis = [0.0, 0.0, 1.0];
    unsafe { os_intrinsics_project(h, axis.as_ptr(), px.as_mut_ptr(), &mut valid) };
    assert_eq!(px, [800.0, 766.0]);
    unsafe { os_intrinsics_free(h) };
}

#[test]
fn errors_set_status_and_message() {
    let mut h = ptr::null_mut();
    let poly = [F, 0.0];
    let bad = OsAffine {
        c: 0.0,
        d: 0.0,
        e: 0.0,
        cx: 0.0,
        cy: 0.0,
    };
    let status = unsafe { os_intrinsics_new(poly.as_ptr(), 2, bad, 10, 10, 180.0, &mut h) };
    assert_eq!(status, OsStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    let lens = lens();
    let mut valid = 0u8;
    let status = unsafe { os_intrinsics_project(lens, ptr::null(), ptr::null_mut(), &mut valid) };
    assert_eq!(status, OsStatus::NullPointer);
    assert!(last_error().contains("xyz"));
    unsafe { os_intrinsics_free(lens) };

    let path = CString::new("/nonexistent/rig.json").unwrap();
    let mut rig = ptr::null_mut();
    assert_eq!(unsafe { os_rig_load(path.as_ptr(), &mut rig) }, OsStatus::Io);
    assert!(rig.is_null());
}

#[test]
fn last_error_is_per_thread() {
    let mut h = ptr::null_mut();
    let status = unsafe { os_intrinsics_new(ptr::null(), 3, OsAffine { c: 1.0, d: 0.0, e: 0.0, cx: 0.0, cy: 0.0 }, 1, 1, 90.0, &mut h) };
    assert_eq!(status, OsStatus::NullPointer);
    let other = std::thread::spawn(|| os_last_error_message().is_null()).join().unwrap();
    assert!(other);
}

fn grid(w: usize, h: usize, n: usize) -> OsGrid {
    OsGrid {
        width: w,
        height: h,
        num_spheres: n,
        d_min: 1.0,
        phi_min: -0.5,
        phi_max: 0.5,
    }
}

#[test]
fn sgm_depth_picks_cost_minima_and_metrics_match() {
    let (w, h, n) = (6, 4, 5);
    let g = grid(w, h, n);
    // Per-pixel minimum at sphere (x + y) % n with a clear margin.
    let mut costs = vec![0.9f32; w * h * n];
    for y in 0..h {
        for x in 0..w {
            costs[((x + y) % n * h + y) * w + x] = 0.0;
        }
    }
    let valid = vec![1u8; costs.len()];
    let params = OsSgmParams {
        p1: 0.0,
        p2: 0.0,
        paths: 8,
        wrap_horizontal: 1,
    };
    let mut index = vec![0u32; w * h];
    let mut out_valid = vec![0u8; w * h];
    let status = unsafe { os_sgm_depth(g, costs.as_ptr(), valid.as_ptr(), params, index.as_mut_ptr(), out_valid.as_mut_ptr()) };
    assert_eq!(status, OsStatus::Ok);
    for y in 0..h {
        for x in 0..w {
            assert_eq!(index[y * w + x] as usize, (x + y) % n);
        }
    }
    assert!(out_valid.iter().all(|&v| v == 1));

    let mut metrics = OsDepthMetrics::default();
    let status = unsafe { os_depth_metrics(g, index.as_ptr(), out_valid.as_ptr(), index.as_ptr(), out_valid.as_ptr(), &mut metrics) };
    assert_eq!(status, OsStatus::Ok);
    assert_eq!((metrics.mae, metrics.rms, metrics.valid_pixels), (0.0, 0.0, w * h));

    let bad = OsSgmParams { paths: 3, ..params };
    let status = unsafe { os_sgm_depth(g, costs.as_ptr(), valid.as_ptr(), bad, index.as_mut_ptr(), out_valid.as_mut_ptr()) };
    assert_eq!(status, OsStatus::InvalidArgument);
}

#[test]
fn rig_file_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rig.json");
    let rig = omnisweep::synth::SyntheticRig::square(0.3, 150.0);
    omnisweep::io::RigFile::new(&rig.intrinsics, &rig.cameras).unwrap().write(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { os_rig_load(cpath.as_ptr(), &mut handle) }, OsStatus::Ok);
    assert_eq!(unsafe { os_rig_camera_count(handle) }, 4);
    let mut m = [0.0; 12];
    assert_eq!(unsafe { os_rig_pose(handle, 0, m.as_mut_ptr()) }, OsStatus::Ok);
    let identity = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    assert!(m.iter().zip(identity).all(|(a, b)| (a - b).abs() < 1e-12), "{m:?}");
    let mut intr = ptr::null_mut();
    assert_eq!(unsafe { os_rig_intrinsics(handle, 2, &mut intr) }, OsStatus::Ok);
    let axis = [0.0, 0.0, 1.0];
    let (mut px, mut valid) = ([0.0; 2], 0u8);
    unsafe { os_intrinsics_project(intr, axis.as_ptr(), px.as_mut_ptr(), &mut valid) };
    let a = rig.intrinsics[2].affine();
    assert_eq!(px, [a.cx, a.cy]);
    assert_eq!(unsafe { os_rig_intrinsics(handle, 4, &mut intr) }, OsStatus::InvalidArgument);
    unsafe {
        os_intrinsics_free(intr);
        os_rig_free(handle);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/omnisweep.h")).unwrap();
    for name in [
        "os_last_error_message",
        "os_intrinsics_new",
        "os_intrinsics_project",
        "os_intrinsics_unproject",
        "os_intrinsics_free",
        "os_rig_load",
        "os_sgm_depth",
        "os_depth_metrics",
        "typedef struct OsIntrinsics OsIntrinsics;",
        "OS_STATUS_PANIC = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(os_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/omnisweep.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header])
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available; skipping"),
        }
    }
}
