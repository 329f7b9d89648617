//! Checkerboard observations of a [`SyntheticRig`].

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SyntheticRig;
use crate::calib::{CheckerboardSpec, CornerObservation, ObservationSet, RigInit};
use crate::camera::{Affine, FisheyeIntrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::pose::Pose;

/// Keep corners at least this far inside the half field of view.
const FOV_MARGIN_RAD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct CalibrationScene {
    pub rig: SyntheticRig,
    pub board: CheckerboardSpec,
    /// Board-to-world(camera 0) poses per capture.
    pub boards: BTreeMap<usize, Pose>,
    pub observations: ObservationSet,
}

impl CalibrationScene {
    /// Places `captures` boards around the rig, facing it from about 1.6 m,
    /// and records every (camera, capture) pair that sees all corners.
    /// Corner pixels get i.i.d. Gaussian noise of `sigma_px`.
    pub fn generate(rig: &SyntheticRig, board: CheckerboardSpec, captures: usize, sigma_px: f64, seed: u64) -> Result<Self> {
        if captures == 0 {
            return Err(Error::InvalidArgument("need at least one capture".into()));
        }
        let noise = Normal::new(0.0, sigma_px).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // The world frame is camera 0's frame.
        let rig_to_world = rig.rig_to_camera[0];
        let half = Vector3::new(
            (board.cols - 1) as f64 * board.square_m / 2.0,
            (board.rows - 1) as f64 * board.square_m / 2.0,
            0.0,
        );

        let mut boards = BTreeMap::new();
        let mut observations = ObservationSet::new();
        for k in 0..captures {
            let kf = k as f64;
            // Boards sit between neighboring cameras, three per gap.
            let gap = (k % 4) as f64;
            let offset = ((k / 4) % 3) as f64 - 1.0;
            let azimuth = (gap + 0.5) * std::f64::consts::FRAC_PI_2 + offset * 0.35 + 0.05 * kf.sin();
            let dist = 1.6 + 0.2 * (kf * 1.7).sin();
            let height = 0.3 * (kf * 2.3).cos();
            let center = Vector3::new(azimuth.cos() * dist, height, azimuth.sin() * dist);
            // Board z axis points away from the rig; tilt it a little.
            let normal = (center.normalize() + Vector3::new(0.15 * (kf * 1.3).sin(), 0.2 * (kf * 0.7).cos(), 0.1 * kf.sin())).normalize();
            let up = Vector3::new(0.0, -1.0, 0.0);
            let bx = up.cross(&normal).normalize();
            let by = normal.cross(&bx);
            let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[bx, by, normal]));
            let board_to_rig = Pose::from_rotation(&rot, center - rot * half);
            let board_to_world = rig_to_world.compose(&board_to_rig);
            boards.insert(k, board_to_world);

            for (i, intr) in rig.intrinsics.iter().enumerate() {
                let pose = rig.cameras[i].compose(&board_to_world);
                if let Some(corners) = observe(&board, intr, &pose, &noise, &mut rng)? {
                    observations.insert(i, k, corners)?;
                }
            }
        }
        Ok(Self {
            rig: rig.clone(),
            board,
            boards,
            observations,
        })
    }

    /// Ground-truth initialization for the bundle adjuster.
    pub fn truth_init(&self) -> RigInit {
        RigInit {
            cameras: self.rig.cameras.clone(),
            boards: self.boards.clone(),
        }
    }

    /// Intrinsics with every refined quantity moved off the truth by a
    /// relative `amount` (center by `amount·200` px).
    pub fn perturbed_intrinsics(&self, amount: f64) -> Vec<FisheyeIntrinsics> {
        self.rig
            .intrinsics
            .iter()
            .map(|intr| {
                let poly: Vec<f64> = intr
                    .poly()
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * (1.0 + if j % 4 == 2 { -amount } else { amount }))
                    .collect();
                let a = intr.affine();
                let affine = Affine {
                    c: a.c * (1.0 + 0.1 * amount),
                    d: a.d,
                    e: a.e,
                    cx: a.cx + 200.0 * amount,
                    cy: a.cy - 150.0 * amount,
                };
                FisheyeIntrinsics::new(poly, affine, intr.image_size(), intr.fov_deg()).expect("perturbed lens stays valid")
            })
            .collect()
    }
}

fn observe(
    board: &CheckerboardSpec,
    intr: &FisheyeIntrinsics,
    board_to_camera: &Pose,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<CornerObservation>>> {
    let mut corners = Vec::with_capacity(board.corner_count());
    for id in 0..board.corner_count() {
        let x = board_to_camera.transform(&board.corner(id));
        if x.x.hypot(x.y).atan2(x.z) > intr.half_fov() - FOV_MARGIN_RAD {
            return Ok(None);
        }
        let (p, valid) = intr.project(&x)?;
        if !valid {
            return Ok(None);
        }
        corners.push(CornerObservation {
            id,
            pixel: PixelPoint::new(p.u + noise.sample(rng), p.v + noise.sample(rng)),
        });
    }
    Ok(Some(corners))
}
