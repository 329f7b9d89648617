//! Board pose from corner rays.
//!
//! Corners are lifted to unit rays, which keeps the estimate valid for lenses
//! wider than 180°. A linear solve of `b × (H·[X, Y, 1]ᵀ) = 0` gives the
//! initial pose, refined by Levenberg–Marquardt on the chordal distance
//! between observed and predicted unit rays.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::board::{CheckerboardSpec, CornerObservation, MIN_CORNERS};
use super::lm::{self, LeastSquaresProblem, LmConfig};
use crate::camera::FisheyeIntrinsics;
use crate::error::{Error, Result};
use crate::pose::{rotate_jacobian, Pose};

struct RayProblem<'a> {
    points: &'a [Vector3<f64>],
    rays: &'a [Vector3<f64>],
}

fn pose_from_params(x: &DVector<f64>) -> Pose {
    Pose {
        r: Vector3::new(x[0], x[1], x[2]),
        t: Vector3::new(x[3], x[4], x[5]),
    }
}

impl LeastSquaresProblem for RayProblem<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let pose = pose_from_params(x);
        let rot = pose.rotation();
        let mut out = DVector::zeros(3 * self.points.len());
        for (k, (p, b)) in self.points.iter().zip(self.rays).enumerate() {
            let y = rot * p + pose.t;
            let n = y.norm();
            if n == 0.0 {
                return Err(Error::Degenerate("board point at the camera center".into()));
            }
            out.fixed_rows_mut::<3>(3 * k).copy_from(&(y / n - b));
        }
        Ok(out)
    }

    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let r = self.residuals(x)?;
        let pose = pose_from_params(x);
        let rot = pose.rotation();
        let mut jac = DMatrix::zeros(3 * self.points.len(), 6);
        for (k, p) in self.points.iter().enumerate() {
            let y = rot * p + pose.t;
            let n = y.norm();
            let u = y / n;
            let dnorm = (Matrix3::identity() - u * u.transpose()) / n;
            jac.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(&(dnorm * rotate_jacobian(&pose.r, p)));
            jac.fixed_view_mut::<3, 3>(3 * k, 3).copy_from(&dnorm);
        }
        Ok((r, jac))
    }
}

/// Linear pose from ray/board-point correspondences.
fn linear_pose(points: &[Vector3<f64>], rays: &[Vector3<f64>]) -> Result<Pose> {
    // Condition the board coordinates.
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    if spread <= 0.0 {
        return Err(Error::Degenerate("all board corners coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / spread;

    let mut a = DMatrix::zeros(3 * points.len(), 9);
    for (k, (p, b)) in points.iter().zip(rays).enumerate() {
        let q = [(p.x - mean.x) * s, (p.y - mean.y) * s, 1.0];
        // Rows of [b]× applied to H·q, with H stored column-major (h1, h2, h3).
        let bx = crate::pose::skew(b);
        for row in 0..3 {
            for col in 0..3 {
                for (j, qj) in q.iter().enumerate() {
                    a[(3 * k + row, 3 * j + col)] = bx[(row, col)] * qj;
                }
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed in board pose solve".into()))?;
    let sv = &svd.singular_values;
    let order = {
        let mut idx: Vec<usize> = (0..sv.len()).collect();
        idx.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
        idx
    };
    let second = sv[order[1]];
    if second <= 1e-8 * sv[order[sv.len() - 1]] {
        return Err(Error::Degenerate("board corners do not determine a pose (collinear?)".into()));
    }
    let h = v_t.row(order[0]).transpose();
    let h1 = Vector3::new(h[0], h[1], h[2]);
    let h2 = Vector3::new(h[3], h[4], h[5]);
    let h3 = Vector3::new(h[6], h[7], h[8]);

    let mut scale = 2.0 / (h1.norm() + h2.norm());
    let sign: f64 = points
        .iter()
        .zip(rays)
        .map(|(p, b)| b.dot(&(h1 * ((p.x - mean.x) * s) + h2 * ((p.y - mean.y) * s) + h3)))
        .sum();
    if sign < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let m = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut rmat = u * v_t;
    if rmat.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        rmat = u * v_t;
    }
    let rot = Rotation3::from_matrix_unchecked(rmat);
    // Undo the conditioning: normalized q = s·(X − mean), so
    // R·X + t = R·(q/s) + R·mean + t' with the normalized-frame translation
    // carried by h3 scaled by 1/s.
    let t = h3 * (scale / s) - rot * mean;
    Ok(Pose::from_rotation(&rot, t))
}

/// Estimates the board-to-camera pose from one record of corner observations.
pub fn estimate_board_pose(corners: &[CornerObservation], board: &CheckerboardSpec, intr: &FisheyeIntrinsics) -> Result<Pose> {
    board.validate()?;
    let mut points = Vec::with_capacity(corners.len());
    let mut rays = Vec::with_capacity(corners.len());
    for c in corners {
        if c.id >= board.corner_count() {
            return Err(Error::InvalidArgument(format!("corner id {} outside board", c.id)));
        }
        let (ray, valid) = intr.unproject(c.pixel);
        if valid {
            points.push(board.corner(c.id));
            rays.push(ray.into_vector());
        }
    }
    if points.len() < MIN_CORNERS {
        return Err(Error::Degenerate(format!("only {} usable corners, need {MIN_CORNERS}", points.len())));
    }
    let init = linear_pose(&points, &rays)?;
    let problem = RayProblem { points: &points, rays: &rays };
    let x0 = DVector::from_vec(vec![init.r.x, init.r.y, init.r.z, init.t.x, init.t.y, init.t.z]);
    let cfg = LmConfig { gradient_tol: 1e-14, ..LmConfig::default() };
    let out = lm::minimize(&problem, x0, &cfg)?;
    Ok(pose_from_params(&out.params).normalized())
}

/// Pixel RMSE of a board pose against its observations.
pub fn board_reprojection_rmse(corners: &[CornerObservation], board: &CheckerboardSpec, intr: &FisheyeIntrinsics, pose: &Pose) -> Result<f64> {
    let mut sum = 0.0;
    for c in corners {
        let (p, _) = intr.project(&pose.transform(&board.corner(c.id)))?;
        sum += (p.u - c.pixel.u).powi(2) + (p.v - c.pixel.v).powi(2);
    }
    Ok((sum / corners.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Affine, PixelPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn lens() -> FisheyeIntrinsics {
        let f = 370.0;
        let poly = vec![f, 0.0, -1.0 / (3.0 * f), 0.0, -1.0 / (45.0 * f * f * f)];
        FisheyeIntrinsics::new(poly, Affine::centered(800.0, 766.0), (1600, 1532), 220.0).unwrap()
    }

    fn observe(board: &CheckerboardSpec, intr: &FisheyeIntrinsics, pose: &Pose, noise: Option<(&mut ChaCha8Rng, f64)>) -> Vec<CornerObservation> {
        let mut out = Vec::new();
        let mut noise = noise;
        for id in 0..board.corner_count() {
            let (p, valid) = intr.project(&pose.transform(&board.corner(id))).unwrap();
            assert!(valid);
            let mut px = p;
            if let Some((rng, sigma)) = noise.as_mut() {
                let n = Normal::new(0.0, *sigma).unwrap();
                px = PixelPoint::new(p.u + n.sample(*rng), p.v + n.sample(*rng));
            }
            out.push(CornerObservation { id, pixel: px });
        }
        out
    }

    #[test]
    fn fronto_parallel_on_axis() {
        let board = CheckerboardSpec::new(5, 5, 0.1).unwrap();
        let intr = lens();
        // Board centered on the optical axis at z = 1.5.
        let truth = Pose::new(Vector3::zeros(), Vector3::new(-0.2, -0.2, 1.5));
        let obs = observe(&board, &intr, &truth, None);
        let est = estimate_board_pose(&obs, &board, &intr).unwrap();
        assert!(est.r.norm() < 1e-9);
        assert!((est.t - truth.t).norm() < 1e-9);
    }

    #[test]
    fn noiseless_oblique_and_wide_angle_boards() {
        let board = CheckerboardSpec::new(12, 10, 0.06).unwrap();
        let intr = lens();
        let cases = [
            Pose::new(Vector3::new(0.3, -0.5, 0.1), Vector3::new(-0.3, -0.2, 1.2)),
            // Board beside the camera, seen at incidence angles beyond 90°.
            Pose::new(Vector3::new(0.0, -1.9, 0.0), Vector3::new(0.9, -0.3, -0.1)),
        ];
        for truth in cases {
            let obs = observe(&board, &intr, &truth, None);
            let est = estimate_board_pose(&obs, &board, &intr).unwrap();
            let err = est.compose(&truth.inverse());
            assert!(err.r.norm() < 1e-6 && err.t.norm() < 1e-6, "{err:?}");
        }
    }

    #[test]
    fn noisy_reprojection_rmse_in_band() {
        let board = CheckerboardSpec::new(12, 10, 0.06).unwrap();
        let intr = lens();
        let truth = Pose::new(Vector3::new(0.2, 0.4, -0.1), Vector3::new(-0.3, -0.25, 1.0));
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obs = observe(&board, &intr, &truth, Some((&mut rng, 0.2)));
            let est = estimate_board_pose(&obs, &board, &intr).unwrap();
            let rmse = board_reprojection_rmse(&obs, &board, &intr, &est).unwrap();
            assert!((0.1..=0.4).contains(&rmse), "seed {seed}: rmse {rmse}");
            total += rmse;
        }
        assert!((0.1..=0.4).contains(&(total / 20.0)));
    }

    #[test]
    fn collinear_corners_are_degenerate() {
        let board = CheckerboardSpec::new(12, 10, 0.06).unwrap();
        let intr = lens();
        let truth = Pose::new(Vector3::zeros(), Vector3::new(-0.3, -0.2, 1.0));
        let row: Vec<_> = observe(&board, &intr, &truth, None).into_iter().take(12).collect();
        assert!(matches!(estimate_board_pose(&row, &board, &intr), Err(Error::Degenerate(_))));
    }
}
