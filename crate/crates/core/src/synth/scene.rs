//! Analytic textured scenes around a rig, rendered through the fisheye
//! model with exact depth.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::SyntheticRig;
use crate::camera::PixelPoint;
use crate::error::Result;
use crate::image::GrayImage;
use crate::sweep::SphereGrid;

/// Scene geometry in rig coordinates (y up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneGeometry {
    /// A single textured sphere centered on the rig origin.
    Sphere { radius: f64 },
    /// Ground plane, a vertical cylindrical wall around the origin and a
    /// textured sky at infinity above the wall.
    Courtyard { wall_radius: f64, wall_top: f64, ground_y: f64 },
}

/// Smooth procedural scene. Surfaces carry solid value-noise texture;
/// the sky is textured by direction only, so it sits at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    pub geometry: SceneGeometry,
    /// Size of the coarsest texture feature in meters.
    pub feature_m: f64,
    pub seed: u64,
}

/// Result of casting one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along the unit ray; infinite for the sky.
    pub distance: f64,
    pub intensity: f64,
}

impl SyntheticScene {
    /// Courtyard sized so that its wall lies exactly on sphere 8 of a
    /// 64-sphere sweep with 1 m minimum depth.
    pub fn courtyard(seed: u64) -> Self {
        Self {
            geometry: SceneGeometry::Courtyard {
                wall_radius: 63.0 / 8.0,
                wall_top: 5.0,
                ground_y: -1.6,
            },
            feature_m: 0.4,
            seed,
        }
    }

    pub fn sphere(radius: f64, feature_m: f64, seed: u64) -> Self {
        Self {
            geometry: SceneGeometry::Sphere { radius },
            feature_m,
            seed,
        }
    }

    /// Surface texture at a 3D point.
    pub fn texture(&self, p: &Vector3<f64>) -> f64 {
        let q = p / self.feature_m;
        128.0 + 60.0 * (value_noise(&q, self.seed) + 0.5 * value_noise(&(q * 2.0), self.seed ^ 0x9e37_79b9))
    }

    /// Sky texture for a direction.
    pub fn sky(&self, dir: &Vector3<f64>) -> f64 {
        let q = dir.normalize() * 24.0;
        128.0 + 60.0 * (value_noise(&q, self.seed ^ 0x5bd1_e995) + 0.5 * value_noise(&(q * 2.0), self.seed ^ 0x27d4_eb2f))
    }

    /// Casts a ray from `origin` (inside the scene) along unit `dir`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Hit {
        let distance = self.distance(origin, dir);
        let intensity = if distance.is_finite() {
            self.texture(&(origin + dir * distance))
        } else {
            self.sky(dir)
        };
        Hit { distance, intensity }
    }

    /// Distance to the first surface along unit `dir`, or infinity.
    pub fn distance(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        match self.geometry {
            SceneGeometry::Sphere { radius } => {
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                -b + (b * b - c).max(0.0).sqrt()
            }
            SceneGeometry::Courtyard {
                wall_radius,
                wall_top,
                ground_y,
            } => {
                let a = dir.x * dir.x + dir.z * dir.z;
                let wall = if a > 0.0 {
                    let b = origin.x * dir.x + origin.z * dir.z;
                    let c = origin.x * origin.x + origin.z * origin.z - wall_radius * wall_radius;
                    let t = (-b + (b * b - a * c).max(0.0).sqrt()) / a;
                    let y = origin.y + t * dir.y;
                    (ground_y..=wall_top).contains(&y).then_some(t)
                } else {
                    None
                };
                let ground = (dir.y < 0.0).then(|| (ground_y - origin.y) / dir.y);
                match (wall, ground) {
                    (Some(w), Some(g)) => w.min(g),
                    (Some(w), None) => w,
                    (None, Some(g)) => g,
                    (None, None) => f64::INFINITY,
                }
            }
        }
    }

    /// Renders every rig camera. Pixels outside the field of view are 0.
    pub fn render(&self, rig: &SyntheticRig) -> Result<Vec<GrayImage>> {
        rig.intrinsics
            .iter()
            .zip(&rig.rig_to_camera)
            .map(|(intr, pose)| {
                let (w, h) = intr.image_size();
                let (w, h) = (w as usize, h as usize);
                let camera_to_rig = pose.inverse();
                let rot = camera_to_rig.rotation();
                let data: Vec<f32> = (0..h)
                    .into_par_iter()
                    .flat_map_iter(|y| {
                        (0..w).map(move |x| {
                            let (ray, valid) = intr.unproject(PixelPoint::new(x as f64, y as f64));
                            if valid {
                                self.cast(&camera_to_rig.t, &(rot * ray.into_vector())).intensity as f32
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect();
                GrayImage::from_vec(w, h, data)
            })
            .collect()
    }

    /// Exact metric depth from the rig origin for every grid pixel
    /// (row-major), infinite for the sky.
    pub fn ground_truth_depths(&self, grid: &SphereGrid) -> Vec<f64> {
        let origin = Vector3::zeros();
        (0..grid.height)
            .flat_map(|h| (0..grid.width).map(move |w| (w, h)))
            .map(|(w, h)| self.distance(&origin, &grid.pixel_ray(w, h)))
            .collect()
    }

    /// Exact intensity seen from the rig origin for every grid pixel.
    pub fn ground_truth_panorama(&self, grid: &SphereGrid) -> Vec<f64> {
        let origin = Vector3::zeros();
        (0..grid.height)
            .flat_map(|h| (0..grid.width).map(move |w| (w, h)))
            .map(|(w, h)| self.cast(&origin, &grid.pixel_ray(w, h)).intensity)
            .collect()
    }
}

fn lattice_value(i: i64, j: i64, k: i64, seed: u64) -> f64 {
    let mut h = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= (k as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smooth 3D value noise in `[−1, 1]` with unit lattice spacing.
fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (i, j, k) = (fx as i64, fy as i64, fz as i64);
    let (u, v, w) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let corner = |di, dj, dk| lattice_value(i + di, j + dj, k + dk, seed);
    let x00 = lerp(corner(0, 0, 0), corner(1, 0, 0), u);
    let x10 = lerp(corner(0, 1, 0), corner(1, 1, 0), u);
    let x01 = lerp(corner(0, 0, 1), corner(1, 0, 1), u);
    let x11 = lerp(corner(0, 1, 1), corner(1, 1, 1), u);
    lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
}
