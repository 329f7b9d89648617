//! Joint refinement of intrinsics, camera poses and board poses by
//! minimizing corner reprojection error in pixels.
//!
//! Camera 0 is held at the identity pose and defines the world frame. The
//! linear polynomial coefficient stays at zero; all other coefficients and
//! the affine parameters except the skew `d` are refined unless disabled.
//! Rolling a camera about its optical axis while rotating its affine map
//! leaves every residual unchanged, so one affine entry besides the unit
//! `(2, 2)` element must stay fixed for the camera poses to be determined.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use super::board::{CheckerboardSpec, ObservationSet};
use super::init::{init_rig, RigInit};
use super::lm::{self, LeastSquaresProblem, LmConfig};
use super::pnp::estimate_board_pose;
use crate::camera::{project_with_jacobian, Affine, AngleTable, FisheyeIntrinsics};
use crate::error::{Error, Result};
use crate::pose::{rotate_jacobian, Pose};

/// Refined affine entries: `c`, `e`, `cx`, `cy`.
const AFFINE_FREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleConfig {
    pub lm: LmConfig,
    /// Refine polynomial coefficients (and the affine map, see below).
    pub refine_intrinsics: bool,
    /// Refine the affine map when intrinsics are refined.
    pub refine_affine: bool,
    /// Huber threshold in pixels; `None` for plain squared error.
    pub huber_px: Option<f64>,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            refine_intrinsics: true,
            refine_affine: true,
            huber_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CalibrationReport {
    /// Root mean squared corner reprojection distance per camera (pixels).
    pub per_camera_rmse: Vec<f64>,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigCalibration {
    pub intrinsics: Vec<FisheyeIntrinsics>,
    /// World(camera 0)-to-camera poses.
    pub cameras: Vec<Pose>,
    /// Board-to-world poses per capture.
    pub boards: BTreeMap<usize, Pose>,
    pub report: CalibrationReport,
}

/// Column offsets of each parameter block.
#[derive(Debug, Clone)]
struct Layout {
    intr: Vec<Option<usize>>,
    refine_affine: bool,
    cams: Vec<Option<usize>>,
    boards: BTreeMap<usize, usize>,
    len: usize,
}

impl Layout {
    fn new(intrinsics: &[FisheyeIntrinsics], captures: impl Iterator<Item = usize>, cfg: &BundleConfig) -> Self {
        let mut len = 0;
        let mut intr = Vec::new();
        for cam in intrinsics {
            let free = cam.poly().len() - usize::from(cam.poly().len() > 1);
            if cfg.refine_intrinsics {
                intr.push(Some(len));
                len += free + if cfg.refine_affine { AFFINE_FREE } else { 0 };
            } else {
                intr.push(None);
            }
        }
        let mut cams = vec![None];
        for _ in 1..intrinsics.len() {
            cams.push(Some(len));
            len += 6;
        }
        let mut boards = BTreeMap::new();
        for k in captures {
            boards.insert(k, len);
            len += 6;
        }
        Self {
            intr,
            refine_affine: cfg.refine_intrinsics && cfg.refine_affine,
            cams,
            boards,
            len,
        }
    }
}

fn read_pose(x: &DVector<f64>, at: usize) -> Pose {
    Pose {
        r: Vector3::new(x[at], x[at + 1], x[at + 2]),
        t: Vector3::new(x[at + 3], x[at + 4], x[at + 5]),
    }
}

fn write_pose(x: &mut DVector<f64>, at: usize, p: &Pose) {
    x.rows_mut(at, 3).copy_from(&p.r);
    x.rows_mut(at + 3, 3).copy_from(&p.t);
}

/// Bundle adjustment as a least-squares problem over a flat parameter vector.
pub(crate) struct BundleProblem<'a> {
    obs: &'a ObservationSet,
    board: &'a CheckerboardSpec,
    base: &'a [FisheyeIntrinsics],
    layout: Layout,
    huber: Option<f64>,
    records: Vec<(usize, usize, usize)>,
    rows: usize,
}

impl<'a> BundleProblem<'a> {
    pub(crate) fn new(obs: &'a ObservationSet, board: &'a CheckerboardSpec, base: &'a [FisheyeIntrinsics], cfg: &BundleConfig) -> Self {
        let layout = Layout::new(base, obs.captures().into_iter(), cfg);
        let mut records = Vec::new();
        let mut rows = 0;
        for (&(i, k), corners) in obs.records() {
            records.push((i, k, rows));
            rows += 2 * corners.len();
        }
        Self {
            obs,
            board,
            base,
            layout,
            huber: cfg.huber_px,
            records,
            rows,
        }
    }

    pub(crate) fn pack(&self, init: &RigInit) -> DVector<f64> {
        let mut x = DVector::zeros(self.layout.len);
        for (i, cam) in self.base.iter().enumerate() {
            if let Some(at) = self.layout.intr[i] {
                let mut at = at;
                for (j, &a) in cam.poly().iter().enumerate() {
                    if j != 1 {
                        x[at] = a;
                        at += 1;
                    }
                }
                if self.layout.refine_affine {
                    let aff = cam.affine();
                    for v in [aff.c, aff.e, aff.cx, aff.cy] {
                        x[at] = v;
                        at += 1;
                    }
                }
            }
        }
        for (i, at) in self.layout.cams.iter().enumerate() {
            if let Some(at) = at {
                write_pose(&mut x, *at, &init.cameras[i]);
            }
        }
        for (k, &at) in &self.layout.boards {
            write_pose(&mut x, at, &init.boards[k]);
        }
        x
    }

    fn camera_model(&self, x: &DVector<f64>, i: usize) -> (Vec<f64>, Affine) {
        let cam = &self.base[i];
        let Some(mut at) = self.layout.intr[i] else {
            return (cam.poly().to_vec(), *cam.affine());
        };
        let mut poly = Vec::with_capacity(cam.poly().len());
        for j in 0..cam.poly().len() {
            if j == 1 {
                poly.push(0.0);
            } else {
                poly.push(x[at]);
                at += 1;
            }
        }
        let affine = if self.layout.refine_affine {
            Affine {
                c: x[at],
                d: cam.affine().d,
                e: x[at + 1],
                cx: x[at + 2],
                cy: x[at + 3],
            }
        } else {
            *cam.affine()
        };
        (poly, affine)
    }

    fn camera_pose(&self, x: &DVector<f64>, i: usize) -> Pose {
        self.layout.cams[i].map_or_else(Pose::identity, |at| read_pose(x, at))
    }

    /// Angle tables covering every corner each camera currently sees.
    fn tables(&self, x: &DVector<f64>) -> Result<Vec<(AngleTable, Affine)>> {
        let mut max_angle = vec![0.0f64; self.base.len()];
        for &(i, k, _) in &self.records {
            let cam = self.camera_pose(x, i);
            let board = read_pose(x, self.layout.boards[&k]);
            for c in self.obs.get(i, k).unwrap() {
                let xc = cam.transform(&board.transform(&self.board.corner(c.id)));
                max_angle[i] = max_angle[i].max(xc.x.hypot(xc.y).atan2(xc.z));
            }
        }
        (0..self.base.len())
            .map(|i| {
                let (poly, affine) = self.camera_model(x, i);
                let angle = (max_angle[i] + 1e-3).min(std::f64::consts::PI - 1e-6);
                Ok((AngleTable::build(&poly, angle, self.base[i].fov_radius())?, affine))
            })
            .collect()
    }

    fn huber_weight(&self, r: &Vector2<f64>) -> f64 {
        match self.huber {
            Some(delta) if r.norm() > delta => (delta / r.norm()).sqrt(),
            _ => 1.0,
        }
    }

    /// Unweighted pixel residuals (projected − observed) per record, in
    /// record order.
    pub(crate) fn raw_residuals(&self, x: &DVector<f64>) -> Result<Vec<Vec<Vector2<f64>>>> {
        let tables = self.tables(x)?;
        self.records
            .par_iter()
            .map(|&(i, k, _)| {
                let cam = self.camera_pose(x, i);
                let board = read_pose(x, self.layout.boards[&k]);
                let (table, affine) = &tables[i];
                self.obs
                    .get(i, k)
                    .unwrap()
                    .iter()
                    .map(|c| {
                        let xc = cam.transform(&board.transform(&self.board.corner(c.id)));
                        let p = project_with_jacobian(table, affine, &xc)?.pixel;
                        Ok(p - Vector2::new(c.pixel.u, c.pixel.v))
                    })
                    .collect()
            })
            .collect()
    }

    fn record_block(&self, x: &DVector<f64>, tables: &[(AngleTable, Affine)], rec: (usize, usize, usize)) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (i, k, _) = rec;
        let corners = self.obs.get(i, k).unwrap();
        let cam = self.camera_pose(x, i);
        let board_at = self.layout.boards[&k];
        let board = read_pose(x, board_at);
        let cam_rot = cam.rotation();
        let board_rot = board.rotation();
        let (table, affine) = &tables[i];
        let mut res = DVector::zeros(2 * corners.len());
        let mut jac = DMatrix::zeros(2 * corners.len(), self.layout.len);
        for (n, c) in corners.iter().enumerate() {
            let xb = self.board.corner(c.id);
            let yw = board_rot * xb + board.t;
            let xc = cam_rot * yw + cam.t;
            let pj = project_with_jacobian(table, affine, &xc)?;
            let r = pj.pixel - Vector2::new(c.pixel.u, c.pixel.v);
            let w = self.huber_weight(&r);
            res.fixed_rows_mut::<2>(2 * n).copy_from(&(r * w));
            let row = 2 * n;
            let dp: Matrix2x3<f64> = pj.d_point * w;

            if let Some(mut at) = self.layout.intr[i] {
                for d in &pj.d_poly {
                    jac.fixed_view_mut::<2, 1>(row, at).copy_from(&(d * w));
                    at += 1;
                }
                if self.layout.refine_affine {
                    for (_, d) in pj.d_affine.iter().enumerate().filter(|(j, _)| *j != 1) {
                        jac.fixed_view_mut::<2, 1>(row, at).copy_from(&(d * w));
                        at += 1;
                    }
                }
            }
            if let Some(at) = self.layout.cams[i] {
                jac.fixed_view_mut::<2, 3>(row, at).copy_from(&(dp * rotate_jacobian(&cam.r, &yw)));
                jac.fixed_view_mut::<2, 3>(row, at + 3).copy_from(&dp);
            }
            let dpr = dp * cam_rot.matrix();
            jac.fixed_view_mut::<2, 3>(row, board_at).copy_from(&(dpr * rotate_jacobian(&board.r, &xb)));
            jac.fixed_view_mut::<2, 3>(row, board_at + 3).copy_from(&dpr);
        }
        Ok((res, jac))
    }
}

impl LeastSquaresProblem for BundleProblem<'_> {
    fn num_params(&self) -> usize {
        self.layout.len
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let raw = self.raw_residuals(x)?;
        let mut out = DVector::zeros(self.rows);
        for (&(_, _, row), rs) in self.records.iter().zip(&raw) {
            for (n, r) in rs.iter().enumerate() {
                let w = self.huber_weight(r);
                out.fixed_rows_mut::<2>(row + 2 * n).copy_from(&(r * w));
            }
        }
        Ok(out)
    }

    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let tables = self.tables(x)?;
        let blocks: Vec<_> = self
            .records
            .par_iter()
            .map(|&rec| self.record_block(x, &tables, rec))
            .collect::<Result<_>>()?;
        let mut res = DVector::zeros(self.rows);
        let mut jac = DMatrix::zeros(self.rows, self.layout.len);
        for (&(_, _, row), (r, j)) in self.records.iter().zip(blocks) {
            res.rows_mut(row, r.len()).copy_from(&r);
            jac.rows_mut(row, r.len()).copy_from(&j);
        }
        Ok((res, jac))
    }
}

/// Refines the rig starting from `init`.
pub fn bundle_adjust(
    obs: &ObservationSet,
    board: &CheckerboardSpec,
    intrinsics: &[FisheyeIntrinsics],
    init: &RigInit,
    config: &BundleConfig,
) -> Result<RigCalibration> {
    config.lm.validate()?;
    board.validate()?;
    obs.validate_against(board)?;
    if obs.is_empty() {
        return Err(Error::Empty("no corner observations"));
    }
    if intrinsics.len() != init.cameras.len() || obs.num_cameras() > intrinsics.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} intrinsics, {} initial camera poses, observations for {} cameras",
            intrinsics.len(),
            init.cameras.len(),
            obs.num_cameras()
        )));
    }
    if let Some(k) = obs.captures().into_iter().find(|k| !init.boards.contains_key(k)) {
        return Err(Error::InvalidArgument(format!("no initial pose for capture {k}")));
    }
    if let Some(delta) = config.huber_px {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("Huber threshold must be positive".into()));
        }
    }

    let problem = BundleProblem::new(obs, board, intrinsics, config);
    let x0 = problem.pack(init);
    let out = lm::minimize(&problem, x0, &config.lm)?;
    if !out.converged {
        log::warn!("bundle adjustment hit the iteration cap; returning the best state");
    }
    let x = &out.params;

    let mut refined = Vec::with_capacity(intrinsics.len());
    for (i, cam) in intrinsics.iter().enumerate() {
        let (poly, affine) = problem.camera_model(x, i);
        let intr = FisheyeIntrinsics::new(poly, affine, cam.image_size(), cam.fov_deg())
            .map_err(|e| Error::Degenerate(format!("refined intrinsics of camera {i} are invalid: {e}")))?;
        refined.push(intr);
    }
    let cameras: Vec<Pose> = (0..intrinsics.len()).map(|i| problem.camera_pose(x, i).normalized()).collect();
    let boards = problem
        .layout
        .boards
        .iter()
        .map(|(&k, &at)| (k, read_pose(x, at).normalized()))
        .collect();

    let raw = problem.raw_residuals(x)?;
    let mut sums = vec![(0.0, 0usize); intrinsics.len()];
    for (&(i, _, _), rs) in problem.records.iter().zip(&raw) {
        for r in rs {
            sums[i].0 += r.norm_squared();
            sums[i].1 += 1;
        }
    }
    let total: f64 = sums.iter().map(|s| s.0).sum();
    let count: usize = sums.iter().map(|s| s.1).sum();
    let report = CalibrationReport {
        per_camera_rmse: sums.iter().map(|&(s, n)| if n > 0 { (s / n as f64).sqrt() } else { 0.0 }).collect(),
        rmse: (total / count as f64).sqrt(),
        iterations: out.iterations,
        converged: out.converged,
        initial_cost: out.initial_cost,
        final_cost: out.cost,
        cost_history: out.cost_history,
    };
    Ok(RigCalibration {
        intrinsics: refined,
        cameras,
        boards,
        report,
    })
}

/// Full pipeline: per-record board poses, rig initialization, bundle
/// adjustment.
pub fn calibrate(
    obs: &ObservationSet,
    board: &CheckerboardSpec,
    intrinsics: &[FisheyeIntrinsics],
    config: &BundleConfig,
) -> Result<RigCalibration> {
    obs.validate_against(board)?;
    let mut board_poses = BTreeMap::new();
    for (&(i, k), corners) in obs.records() {
        let intr = intrinsics
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no intrinsics for camera {i}")))?;
        let pose = estimate_board_pose(corners, board, intr).map_err(|e| e.context(format!("board pose of camera {i} capture {k}")))?;
        board_poses.insert((i, k), pose);
    }
    let init = init_rig(obs, &board_poses, intrinsics.len())?;
    bundle_adjust(obs, board, intrinsics, &init, config)
}
