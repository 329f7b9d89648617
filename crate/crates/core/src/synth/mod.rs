//! Synthetic rigs and scenes with exactly known geometry, used as test
//! oracles and by the `synth` CLI command.

pub mod calibration;
pub mod scene;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::camera::{Affine, FisheyeIntrinsics};
use crate::error::Result;
use crate::pose::Pose;

pub use calibration::CalibrationScene;
pub use scene::SyntheticScene;

/// Lens whose polynomial is the truncated series of `ρ / tan(ρ / F)`, i.e.
/// close to an equidistant fisheye with focal length `focal` pixels.
pub fn equidistant_lens(focal: f64, affine: Affine, image_size: (u32, u32), fov_deg: f64) -> Result<FisheyeIntrinsics> {
    let poly = vec![focal, 0.0, -1.0 / (3.0 * focal), 0.0, -1.0 / (45.0 * focal.powi(3))];
    FisheyeIntrinsics::new(poly, affine, image_size, fov_deg)
}

/// Cameras with known intrinsics and world(camera 0)-to-camera poses, plus
/// the rig-to-camera poses they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRig {
    pub intrinsics: Vec<FisheyeIntrinsics>,
    /// World(camera 0)-to-camera poses; entry 0 is the identity.
    pub cameras: Vec<Pose>,
    /// Rig-to-camera poses in the designed rig frame (y up, x along camera
    /// 0's optical axis).
    pub rig_to_camera: Vec<Pose>,
}

impl SyntheticRig {
    /// Four 220° cameras on a horizontal square of circumradius `radius`
    /// meters, camera `i` at azimuth `i·90°` looking radially outward with
    /// its image rows pointing down. Lenses differ slightly per camera.
    pub fn square(radius: f64, focal: f64) -> Self {
        let side = (2.0 * (2.1 * focal).ceil()) as u32;
        let mut intrinsics = Vec::new();
        let mut rig_to_camera = Vec::new();
        for i in 0..4 {
            let fi = i as f64;
            let affine = Affine {
                c: 1.0 + 0.001 * fi,
                d: 0.0005 * (fi - 1.5),
                e: -0.0003 * fi,
                cx: side as f64 / 2.0 - 0.5 + 1.5 * fi - 2.0,
                cy: side as f64 / 2.0 - 0.5 - fi + 1.0,
            };
            intrinsics.push(equidistant_lens(focal * (1.0 + 0.02 * fi), affine, (side, side), 220.0).expect("valid synthetic lens"));
            let beta = fi * std::f64::consts::FRAC_PI_2;
            let z = Vector3::new(beta.cos(), 0.0, beta.sin());
            let y = Vector3::new(0.0, -1.0, 0.0);
            let x = y.cross(&z);
            let camera_to_rig = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
            let rot = camera_to_rig.inverse();
            let center = z * radius;
            rig_to_camera.push(Pose::from_rotation(&rot, -(rot * center)));
        }
        let world = rig_to_camera[0].inverse();
        let cameras = rig_to_camera.iter().map(|p| p.compose(&world)).collect();
        Self {
            intrinsics,
            cameras,
            rig_to_camera,
        }
    }

    pub fn len(&self) -> usize {
        self.intrinsics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intrinsics.is_empty()
    }
}
