//! Rig-centered spherical coordinates and warping of fisheye images onto
//! concentric inverse-depth spheres.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeIntrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pose::Pose;

/// Inverse depth of the sphere at infinity (index 0).
pub const INFINITY_INVERSE_DEPTH: f64 = 1.0 / 8_388_608.0;

/// Equirectangular sampling of the sweep spheres. Columns are azimuth θ
/// over `[−π, π)` (wrapping), rows are elevation φ from `phi_max` (row 0)
/// down to `phi_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub width: usize,
    pub height: usize,
    pub num_spheres: usize,
    /// Minimum depth in meters (radius of the innermost sphere).
    pub d_min: f64,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl SphereGrid {
    pub fn new(width: usize, height: usize, num_spheres: usize, d_min: f64, phi_min: f64, phi_max: f64) -> Result<Self> {
        let grid = Self {
            width,
            height,
            num_spheres,
            d_min,
            phi_min,
            phi_max,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_spheres == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.num_spheres
            )));
        }
        if !(self.d_min > 0.0 && self.d_min.is_finite()) {
            return Err(Error::InvalidArgument(format!("minimum depth must be positive, got {}", self.d_min)));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(-half_pi <= self.phi_min && self.phi_min < self.phi_max && self.phi_max <= half_pi) {
            return Err(Error::InvalidArgument(format!(
                "elevation range [{}, {}] must satisfy -pi/2 <= min < max <= pi/2",
                self.phi_min, self.phi_max
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Azimuth of column `w`'s center.
    pub fn theta(&self, w: f64) -> f64 {
        -std::f64::consts::PI + (w + 0.5) * std::f64::consts::TAU / self.width as f64
    }

    /// Elevation of row `h`'s center.
    pub fn phi(&self, h: f64) -> f64 {
        self.phi_max - (h + 0.5) * (self.phi_max - self.phi_min) / self.height as f64
    }

    /// Unit ray through the center of pixel (w, h).
    pub fn pixel_ray(&self, w: usize, h: usize) -> Vector3<f64> {
        ray_dir(self.theta(w as f64), self.phi(h as f64))
    }

    /// Continuous (column, row) of a direction; columns in `[−0.5, W − 0.5)`.
    pub fn pixel_of_direction(&self, dir: &Vector3<f64>) -> (f64, f64) {
        let theta = dir.z.atan2(dir.x);
        let phi = dir.y.atan2(dir.x.hypot(dir.z));
        let w = (theta + std::f64::consts::PI) * self.width as f64 / std::f64::consts::TAU - 0.5;
        let h = (self.phi_max - phi) * self.height as f64 / (self.phi_max - self.phi_min) - 0.5;
        (w, h)
    }

    /// Inverse depth `d_n` of sphere `n`; the outermost sphere is at
    /// infinity and the innermost at `d_min`.
    pub fn inverse_depth(&self, n: usize) -> Result<f64> {
        if n >= self.num_spheres {
            return Err(Error::InvalidArgument(format!("sphere index {n} out of range 0..{}", self.num_spheres)));
        }
        if n == 0 {
            return Ok(INFINITY_INVERSE_DEPTH);
        }
        Ok(n as f64 / (self.d_min * (self.num_spheres - 1) as f64))
    }

    pub fn inverse_depths(&self) -> Vec<f64> {
        (0..self.num_spheres).map(|n| self.inverse_depth(n).expect("index in range")).collect()
    }

    /// Nearest sphere index for a metric depth (infinite depth → 0, depths
    /// below `d_min` clamp to the innermost sphere).
    pub fn index_for_depth(&self, depth: f64) -> usize {
        if self.num_spheres == 1 || depth.is_infinite() {
            return 0;
        }
        let n = (self.d_min * (self.num_spheres - 1) as f64 / depth).round();
        (n.max(0.0) as usize).min(self.num_spheres - 1)
    }
}

/// Unit direction of the spherical coordinate (θ, φ).
pub fn ray_dir(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(phi.cos() * theta.cos(), phi.sin(), phi.cos() * theta.sin())
}

/// Rig coordinate frame: origin at the centroid of camera centers, y normal
/// to the camera-center plane, x along camera 0's optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RigFrame {
    /// Rig-to-world pose.
    pub rig_to_world: Pose,
    /// Rig-to-camera pose per camera (maps rig coordinates into camera `i`).
    pub cameras: Vec<Pose>,
}

impl RigFrame {
    /// Camera `i`'s center in rig coordinates.
    pub fn camera_center(&self, i: usize) -> Vector3<f64> {
        self.cameras[i].center()
    }
}

fn perpendicular_component(v: &Vector3<f64>, normal: &Vector3<f64>) -> Vector3<f64> {
    v - normal * normal.dot(v)
}

/// Builds the rig frame from world-to-camera poses.
pub fn build_rig_frame(cameras: &[Pose]) -> Result<RigFrame> {
    if cameras.is_empty() {
        return Err(Error::Empty("rig has no cameras"));
    }
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Pose::center).collect();
    let origin = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    // Camera axes in world coordinates.
    let up_of = |p: &Pose| p.rotation().inverse() * Vector3::new(0.0, -1.0, 0.0);
    let mean_up: Vector3<f64> = cameras.iter().map(up_of).sum();

    let scatter: Matrix3<f64> = centers.iter().map(|c| (c - origin) * (c - origin).transpose()).sum();
    let eig = scatter.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, large) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);

    let scale = centers.iter().map(|c| (c - origin).norm()).fold(0.0, f64::max);
    let normal = if large <= (1e-9 * scale.max(1.0)).powi(2) {
        None
    } else if mid > 1e-12 * large {
        Some(eig.eigenvectors.column(order[0]).into_owned())
    } else {
        // Collinear centers: any plane through the line fits; take the one
        // closest to horizontal for the cameras.
        let line = eig.eigenvectors.column(order[2]).into_owned();
        let n = perpendicular_component(&mean_up, &line);
        (n.norm() > 1e-9).then(|| n.normalize())
    };

    let rotation = match normal {
        Some(mut y) => {
            if y.dot(&mean_up) < 0.0 {
                y = -y;
            }
            let cam0 = cameras[0].rotation().inverse();
            let forward = perpendicular_component(&(cam0 * Vector3::z()), &y);
            let x = if forward.norm() > 1e-9 {
                forward.normalize()
            } else {
                perpendicular_component(&(cam0 * Vector3::x()), &y).normalize()
            };
            let z = x.cross(&y);
            Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
        }
        None => {
            log::warn!("camera centers do not define a plane; using camera 0 axes for the rig frame");
            cameras[0].rotation().inverse()
        }
    };
    let rig_to_world = Pose::from_rotation(&rotation, origin);
    let rig_cameras = cameras.iter().map(|c| c.compose(&rig_to_world)).collect();
    Ok(RigFrame {
        rig_to_world,
        cameras: rig_cameras,
    })
}

/// One camera's image resampled on one sweep sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalImage {
    pub width: usize,
    pub height: usize,
    pub camera: usize,
    pub sphere: usize,
    /// Row-major samples; 0 where invalid.
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl SphericalImage {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Fisheye image with its intrinsics and per-pixel field-of-view mask.
#[derive(Debug, Clone)]
pub struct FisheyeView {
    pub image: GrayImage,
    pub intrinsics: FisheyeIntrinsics,
    fov_mask: Vec<bool>,
}

impl FisheyeView {
    pub fn new(image: GrayImage, intrinsics: FisheyeIntrinsics) -> Result<Self> {
        let (w, h) = intrinsics.image_size();
        if (image.width(), image.height()) != (w as usize, h as usize) {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but intrinsics expect {w}x{h}",
                image.width(),
                image.height()
            )));
        }
        let mut fov_mask = Vec::with_capacity(image.width() * image.height());
        for y in 0..image.height() {
            for x in 0..image.width() {
                fov_mask.push(intrinsics.pixel_in_fov(PixelPoint::new(x as f64, y as f64)));
            }
        }
        Ok(Self {
            image,
            intrinsics,
            fov_mask,
        })
    }

    pub fn fov_mask(&self) -> &[bool] {
        &self.fov_mask
    }

    /// Bilinear sample of the image at the projection of a camera-frame
    /// point; `None` when the projection or any of its four neighbors is
    /// outside the field of view or the image.
    pub fn sample_point(&self, x: &Vector3<f64>) -> Option<f64> {
        match self.intrinsics.project(x) {
            Ok((p, true)) => self.image.sample_masked(&self.fov_mask, p.u, p.v),
            _ => None,
        }
    }

    /// Replaces intensities by their per-image standardized values over the
    /// field of view. Returns `true` when the image is constant.
    pub fn normalize(&mut self) -> Result<bool> {
        let (w, h) = (self.image.width(), self.image.height());
        let mut values: Vec<f32> = self.image.data().to_vec();
        let degenerate = crate::cost::normalize_values(&mut values, &self.fov_mask)?;
        self.image = GrayImage::from_vec(w, h, values)?;
        Ok(degenerate)
    }
}

/// Samples camera `camera` on sphere `n`: each pixel holds the image value
/// at the projection of the sphere point `ray / d_n` given the rig-to-camera
/// pose.
pub fn warp(view: &FisheyeView, rig_to_camera: &Pose, camera: usize, n: usize, grid: &SphereGrid) -> Result<SphericalImage> {
    let inv_depth = grid.inverse_depth(n)?;
    let rot = rig_to_camera.rotation();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..grid.height)
        .into_par_iter()
        .map(|h| {
            let mut data = vec![0.0f32; grid.width];
            let mut mask = vec![false; grid.width];
            for w in 0..grid.width {
                let x = rot * (grid.pixel_ray(w, h) / inv_depth) + rig_to_camera.t;
                if let Some(v) = view.sample_point(&x) {
                    data[w] = v as f32;
                    mask[w] = true;
                }
            }
            (data, mask)
        })
        .collect();
    let (data, mask): (Vec<Vec<f32>>, Vec<Vec<bool>>) = rows.into_iter().unzip();
    Ok(SphericalImage {
        width: grid.width,
        height: grid.height,
        camera,
        sphere: n,
        data: data.concat(),
        mask: mask.concat(),
    })
}

/// Warps every camera onto sphere `n`.
pub fn warp_all(views: &[FisheyeView], frame: &RigFrame, n: usize, grid: &SphereGrid) -> Result<Vec<SphericalImage>> {
    if views.len() != frame.cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images for {} calibrated cameras",
            views.len(),
            frame.cameras.len()
        )));
    }
    views
        .iter()
        .zip(&frame.cameras)
        .enumerate()
        .map(|(i, (view, pose))| warp(view, pose, i, n, grid))
        .collect()
}
