//! Acceptance criteria A1–A7. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line in the test output.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omnisweep::calib::{calibrate, BundleConfig, CheckerboardSpec};
use omnisweep::camera::Affine;
use omnisweep::cost::{build_cost_volume, zncc_cost, CostVolume, PairSelection, Zncc};
use omnisweep::error::Error;
use omnisweep::io::{read_ocsv, read_osph, read_ply, write_ocsv, write_osph, write_ply, OcsvVolume, PlyFormat, PlyPoint, RigFile};
use omnisweep::sgm::{aggregate_path, compute_metrics, error_map, metrics_of, sgm_aggregate, wta, InverseDepthMap, SgmParams};
use omnisweep::sweep::{build_rig_frame, FisheyeView, SphereGrid, SphericalImage};
use omnisweep::synth::{equidistant_lens, CalibrationScene, SyntheticRig, SyntheticScene};

// Pinned tolerances.
const A1_ANGLE_TOL: f64 = 1e-6;
const A1_TIME: Duration = Duration::from_secs(1);
const A2_POSE_TOL: f64 = 1e-4;
const A2_RMSE_BAND: (f64, f64) = (0.1, 0.4);
const A2_TIME: Duration = Duration::from_secs(60);
const A3_WITHIN_ONE: f64 = 0.90;
const A3_MAE: f64 = 1.0;
const A3_TIME: Duration = Duration::from_secs(300);
const A5_TOL: f64 = 1e-12;
const A7_TOL: f32 = 1e-6;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// A1: projection round trip on 10,000 in-FOV rays per lens.
fn a1() -> Outcome {
    let mut lenses = SyntheticRig::square(0.3, 220.0).intrinsics;
    lenses.push(equidistant_lens(150.0, Affine::centered(320.0, 240.0), (640, 480), 190.0).map_err(|e| e.to_string())?);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for lens in &lenses {
        let start = Instant::now();
        for _ in 0..10_000 {
            let theta = rng.random_range(0.0..lens.half_fov());
            let psi = rng.random_range(-PI..PI);
            let x = Vector3::new(theta.sin() * psi.cos(), theta.sin() * psi.sin(), theta.cos()) * rng.random_range(0.1..10.0);
            // Rays may land off the sensor; the round trip is still defined.
            let (m, inside) = lens.project_normalized(&x).map_err(|e| e.to_string())?;
            let (ray, back) = lens.unproject(lens.affine().apply(m));
            if !(inside && back) {
                return Err(format!("in-FOV ray at {theta} rad flagged invalid"));
            }
            worst = worst.max(ray.as_vector().angle(&x));
        }
        slowest = slowest.max(start.elapsed());
    }
    check(
        worst < A1_ANGLE_TOL && slowest < A1_TIME,
        format!("{} lenses, worst angle {worst:.2e} rad (< {A1_ANGLE_TOL:e}), slowest set {slowest:.2?}", lenses.len()),
    )
}

fn a2_scene(sigma: f64, seed: u64) -> Result<CalibrationScene, String> {
    let rig = SyntheticRig::square(0.3, 220.0);
    let board = CheckerboardSpec::new(12, 10, 0.06).map_err(|e| e.to_string())?;
    CalibrationScene::generate(&rig, board, 12, sigma, seed).map_err(|e| e.to_string())
}

/// A2: calibration recovery, noiseless and with 0.2 px corner noise.
fn a2() -> Outcome {
    let start = Instant::now();
    let scene = a2_scene(0.0, 0)?;
    let out = calibrate(&scene.observations, &scene.board, &scene.perturbed_intrinsics(0.01), &BundleConfig::default()).map_err(|e| e.to_string())?;
    let (mut rot, mut trans) = (0.0f64, 0.0f64);
    for (est, truth) in out.cameras.iter().zip(&scene.rig.cameras) {
        rot = rot.max(est.compose(&truth.inverse()).r.norm());
        trans = trans.max((est.center() - truth.center()).norm());
    }
    let mut rmses = Vec::new();
    for seed in 0..5 {
        let noisy = a2_scene(0.2, 100 + seed)?;
        let out = calibrate(&noisy.observations, &noisy.board, &noisy.perturbed_intrinsics(0.01), &BundleConfig::default()).map_err(|e| e.to_string())?;
        rmses.push(out.report.rmse);
    }
    let elapsed = start.elapsed();
    let in_band = rmses.iter().all(|r| (A2_RMSE_BAND.0..=A2_RMSE_BAND.1).contains(r));
    check(
        rot < A2_POSE_TOL && trans < A2_POSE_TOL && in_band && elapsed < A2_TIME,
        format!(
            "rotation {rot:.2e} rad, translation {trans:.2e} m (< {A2_POSE_TOL:e}); noisy RMSE {:?} px in {A2_RMSE_BAND:?}; {elapsed:.2?}",
            rmses.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

/// A3: end-to-end depth on the synthetic courtyard, single-threaded.
fn a3() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let rig = SyntheticRig::square(0.5, 150.0);
        let scene = SyntheticScene::courtyard(0);
        let grid = SphereGrid::new(400, 100, 64, 1.0, -PI / 4.0, PI / 4.0).map_err(|e| e.to_string())?;
        let run = || -> omnisweep::Result<InverseDepthMap> {
            let views = scene
                .render(&rig)?
                .into_iter()
                .zip(&rig.intrinsics)
                .map(|(img, intr)| FisheyeView::new(img, intr.clone()))
                .collect::<omnisweep::Result<Vec<_>>>()?;
            let frame = build_rig_frame(&rig.cameras)?;
            let volume = build_cost_volume(&views, &frame, &grid, &Zncc { window: 9 }, &PairSelection::all(4))?;
            let params = SgmParams {
                p1: 0.1,
                p2: 12.0,
                ..SgmParams::default()
            };
            Ok(wta(&sgm_aggregate(&volume, &params)?))
        };
        let pred = run().map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let gt = InverseDepthMap::from_depths(grid, &scene.ground_truth_depths(&grid)).map_err(|e| e.to_string())?;
        let errors = error_map(&pred, &gt).map_err(|e| e.to_string())?;
        let one_index = 100.0 / grid.num_spheres as f64;
        let valid: Vec<f64> = errors.values.iter().zip(&errors.mask).filter(|(_, &m)| m).map(|(&e, _)| e).collect();
        let within = valid.iter().filter(|&&e| e <= one_index + 1e-12).count() as f64 / valid.len() as f64;
        let mae = compute_metrics(&errors).map_err(|e| e.to_string())?.mae;
        check(
            within >= A3_WITHIN_ONE && mae < A3_MAE && elapsed < A3_TIME,
            format!(
                "{:.1}% of {} valid pixels within one index (>= {:.0}%), MAE {mae:.3} (< {A3_MAE}), {elapsed:.2?} single-threaded",
                within * 100.0,
                valid.len(),
                A3_WITHIN_ONE * 100.0
            ),
        )
    })
}

fn dyadic_volume(w: usize, h: usize, n: usize, rng: &mut ChaCha8Rng) -> CostVolume {
    let grid = SphereGrid::new(w, h, n, 1.0, -0.5, 0.5).unwrap();
    let data = (0..w * h * n).map(|_| rng.random_range(0..=16) as f32 / 16.0).collect();
    CostVolume::new(grid, data, vec![true; w * h * n]).unwrap()
}

/// Brute force over all label sequences along a row: best energy of a
/// prefix ending at each pixel with each label.
fn exhaustive_prefix_minima(costs: &[Vec<f64>], p1: f64, p2: f64) -> Vec<Vec<f64>> {
    let (len, labels) = (costs.len(), costs[0].len());
    let mut best = vec![vec![f64::INFINITY; labels]; len];
    let mut seq = vec![0usize; len];
    let total = labels.pow(len as u32);
    for code in 0..total {
        let mut c = code;
        for s in seq.iter_mut() {
            *s = c % labels;
            c /= labels;
        }
        let mut energy = 0.0;
        for p in 0..len {
            if p > 0 {
                energy += match seq[p].abs_diff(seq[p - 1]) {
                    0 => 0.0,
                    1 => p1,
                    _ => p2,
                };
            }
            energy += costs[p][seq[p]];
            if energy < best[p][seq[p]] {
                best[p][seq[p]] = energy;
            }
        }
    }
    best
}

/// A4: single-path aggregation equals the exhaustive oracle; 8-path wrapped
/// aggregation commutes with column rotation.
fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (p1, p2) = (0.125, 0.75);
    let params = SgmParams {
        p1,
        p2,
        paths: 8,
        wrap_horizontal: false,
    };
    let mut cases = 0;
    for (w, n) in [(1, 2), (3, 4), (5, 6), (8, 6)] {
        for _ in 0..3 {
            let vol = dyadic_volume(w, 1, n, &mut rng);
            let got = aggregate_path(&vol, (1, 0), &params).map_err(|e| e.to_string())?;
            let costs: Vec<Vec<f64>> = (0..w).map(|x| (0..n).map(|k| vol.data[k * w + x] as f64).collect()).collect();
            let best = exhaustive_prefix_minima(&costs, p1, p2);
            for x in 0..w {
                let shift = if x == 0 { 0.0 } else { best[x - 1].iter().cloned().fold(f64::INFINITY, f64::min) };
                for k in 0..n {
                    let want = best[x][k] - shift;
                    if got[k * w + x] != want {
                        return Err(format!("{w}x1x{n}: pixel {x} label {k}: {} != oracle {want}", got[k * w + x]));
                    }
                }
            }
            cases += 1;
        }
    }
    let wrapped = SgmParams {
        wrap_horizontal: true,
        ..params
    };
    let (w, h, n) = (11, 6, 5);
    let vol = dyadic_volume(w, h, n, &mut rng);
    let base = sgm_aggregate(&vol, &wrapped).map_err(|e| e.to_string())?;
    let rotate = |v: &CostVolume, s: usize| -> CostVolume {
        let mut out = v.clone();
        for k in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let to = out.index((x + s) % w, y, k);
                    out.data[to] = v.data[v.index(x, y, k)];
                }
            }
        }
        out
    };
    for s in 1..w {
        let rotated = sgm_aggregate(&rotate(&vol, s), &wrapped).map_err(|e| e.to_string())?;
        if rotated.data != rotate(&base, s).data {
            return Err(format!("8-path aggregation not equivariant under a {s}-column rotation"));
        }
    }
    Ok(format!("{cases} single-path volumes match the exhaustive oracle exactly; {} rotations equivariant exactly", w - 1))
}

/// A5: metric values on the reference example and random properties.
fn a5() -> Outcome {
    let m = metrics_of(&[0.0, 2.0, 4.0, 6.0]).map_err(|e| e.to_string())?;
    let exact = [(m.pct_gt1, 75.0), (m.pct_gt3, 50.0), (m.pct_gt5, 25.0), (m.mae, 3.0), (m.rms, 14f64.sqrt())];
    if let Some((got, want)) = exact.iter().find(|(g, w)| (g - w).abs() > A5_TOL) {
        return Err(format!("reference example gave {got}, expected {want}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let len = rng.random_range(1..200);
        let errors: Vec<f64> = (0..len).map(|_| rng.random_range(0..64) as f64 * 100.0 / 64.0).collect();
        let m = metrics_of(&errors).map_err(|e| e.to_string())?;
        if !(m.pct_gt1 >= m.pct_gt3 && m.pct_gt3 >= m.pct_gt5 && m.rms >= m.mae - 1e-12) {
            return Err(format!("random map {trial}: {m:?}"));
        }
    }
    Ok("{0,2,4,6} -> 75/50/25 %, MAE 3, RMS sqrt(14) within 1e-12; 1000 random maps monotone with RMS >= MAE".into())
}

fn corrupt_is(path: &Path, bytes: &[u8], read: impl Fn(&Path) -> omnisweep::Result<()>, want: &str) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| e.to_string())?;
    match read(path) {
        Err(e) if e.to_string().contains(want) => Ok(()),
        Err(e) => Err(format!("expected an error mentioning {want:?}, got {e}")),
        Ok(()) => Err(format!("corrupted file accepted (wanted {want:?})")),
    }
}

/// A6: bit-exact round trips and specific header errors.
fn a6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let err = |e: Error| e.to_string();

    let vol = OcsvVolume {
        width: 7,
        height: 3,
        depth: 4,
        data: (0..84).map(|_| f32::from_bits(rng.random_range(0..0x7f00_0000u32))).collect(),
        mask: (0..84).map(|_| rng.random_bool(0.7)).collect(),
    };
    let p = d.join("v.ocsv");
    write_ocsv(&p, &vol).map_err(err)?;
    let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
    let back = read_ocsv(&p).map_err(err)?;
    if back.data.iter().map(|v| v.to_bits()).ne(vol.data.iter().map(|v| v.to_bits())) || back.mask != vol.mask {
        return Err("OCSV round trip changed the payload".into());
    }
    write_ocsv(&p, &back).map_err(err)?;
    if std::fs::read(&p).map_err(|e| e.to_string())? != bytes {
        return Err("OCSV rewrite is not byte-identical".into());
    }

    let img = SphericalImage {
        width: 5,
        height: 4,
        camera: 2,
        sphere: 17,
        data: (0..20).map(|_| rng.random_range(0.0..255.0)).collect(),
        mask: (0..20).map(|_| rng.random_bool(0.5)).collect(),
    };
    let p = d.join(omnisweep::io::osph_name(2, 17));
    write_osph(&p, &img).map_err(err)?;
    if read_osph(&p).map_err(err)? != img {
        return Err("OSPH round trip differs".into());
    }

    let rig = SyntheticRig::square(0.4, 200.0);
    let file = RigFile::new(&rig.intrinsics, &rig.cameras).map_err(err)?;
    let p = d.join("rig.json");
    file.write(&p).map_err(err)?;
    let back = RigFile::read(&p).map_err(err)?;
    let same_floats = back.intrinsics().map_err(err)? == rig.intrinsics
        && back.poses().iter().zip(&rig.cameras).all(|(a, b)| a.r == b.r && a.t == b.t);
    if back != file || !same_floats {
        return Err("rig file round trip differs".into());
    }

    let points: Vec<PlyPoint> = (0..50)
        .map(|_| PlyPoint {
            position: [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)],
            intensity: rng.random_range(0.0..255.0),
        })
        .collect();
    for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
        let p = d.join("c.ply");
        write_ply(&p, &points, format).map_err(err)?;
        if read_ply(&p).map_err(err)? != points {
            return Err(format!("PLY {format:?} round trip differs"));
        }
    }

    let bad = d.join("bad.ocsv");
    let ocsv = |p: &Path| read_ocsv(p).map(|_| ());
    let mut wrong_magic = bytes.clone();
    wrong_magic[..4].copy_from_slice(b"OCSX");
    corrupt_is(&bad, &wrong_magic, ocsv, "bad magic")?;
    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&9u32.to_le_bytes());
    corrupt_is(&bad, &wrong_version, ocsv, "unsupported version 9")?;
    corrupt_is(&bad, &bytes[..bytes.len() - 3], ocsv, "truncated")?;
    corrupt_is(&bad, &bytes[..10], ocsv, "truncated")?;
    let mut bad_mask = bytes.clone();
    *bad_mask.last_mut().unwrap() = 7;
    corrupt_is(&bad, &bad_mask, ocsv, "validity byte 7")?;
    let osph = |p: &Path| read_osph(p).map(|_| ());
    corrupt_is(&bad, &bytes, osph, "bad magic")?;
    Ok("OCSV, OSPH, rig file and PLY (ASCII, binary) round trip bit-exactly; magic, version, truncation and mask corruption rejected".into())
}

/// A7: ZNCC cost is unchanged by per-image affine intensity changes.
fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, h) = (40, 16);
    let random = |rng: &mut ChaCha8Rng, camera| SphericalImage {
        width: w,
        height: h,
        camera,
        sphere: 0,
        data: (0..w * h).map(|_| rng.random_range(0.0..255.0)).collect(),
        mask: (0..w * h).map(|_| rng.random_bool(0.95)).collect(),
    };
    let mut worst = 0.0f32;
    for _ in 0..20 {
        let (a, b) = (random(&mut rng, 0), random(&mut rng, 1));
        let base = zncc_cost(&a, &b, 9).map_err(|e| e.to_string())?;
        let mut remap = |img: &SphericalImage| {
            let (s, o) = (rng.random_range(0.5..2.0), rng.random_range(-50.0..50.0));
            let mut out = img.clone();
            out.data.iter_mut().for_each(|v| *v = s * *v + o);
            out
        };
        let (a2, b2) = (remap(&a), remap(&b));
        let moved = zncc_cost(&a2, &b2, 9).map_err(|e| e.to_string())?;
        if moved.mask != base.mask {
            return Err("validity changed under an intensity transform".into());
        }
        for ((x, y), &m) in base.data.iter().zip(&moved.data).zip(&base.mask) {
            if m {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check(worst <= A7_TOL, format!("20 image pairs, worst cost change {worst:.2e} (<= {A7_TOL:e})"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [("A1", a1), ("A2", a2), ("A3", a3), ("A4", a4), ("A5", a5), ("A6", a6), ("A7", a7)];
    let mut failed = 0;
    for (id, run) in criteria {
        match run() {
            Ok(detail) => println!("{id} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
