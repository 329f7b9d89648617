//! Panorama reprojection and point-cloud export of depth maps.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::{write_ply, PlyFormat, PlyPoint};
use crate::sgm::InverseDepthMap;
use crate::sweep::{FisheyeView, RigFrame};

/// Equirectangular intensity image with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl Panorama {
    /// Image with invalid pixels set to 0.
    pub fn to_image(&self) -> GrayImage {
        let data = self.data.iter().zip(&self.mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        GrayImage::from_vec(self.width, self.height, data).expect("panorama buffers match its size")
    }
}

/// Samples, for every pixel with a depth, the image of the camera nearest
/// to the pixel's 3D point `ray / d_{n*}` among those that see it. Pixels at
/// infinity use the first camera (by index) whose view contains the ray.
pub fn render_panorama(depth: &InverseDepthMap, views: &[FisheyeView], frame: &RigFrame) -> Result<Panorama> {
    if views.len() != frame.cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images for {} calibrated cameras",
            views.len(),
            frame.cameras.len()
        )));
    }
    let grid = depth.grid;
    let inv = depth.inv_depths();
    let centers: Vec<_> = (0..views.len()).map(|i| frame.camera_center(i)).collect();
    let rotations: Vec<_> = frame.cameras.iter().map(|p| p.rotation()).collect();
    let samples: Vec<Option<f32>> = (0..grid.pixels())
        .into_par_iter()
        .map(|p| {
            if !depth.mask[p] {
                return None;
            }
            let ray = grid.pixel_ray(p % grid.width, p / grid.width);
            let mut order: Vec<usize> = (0..views.len()).collect();
            if depth.index[p] == 0 {
                // At infinity every camera sees the point along the ray itself.
                return order.into_iter().find_map(|i| views[i].sample_point(&(rotations[i] * ray)).map(|v| v as f32));
            }
            let point = ray / inv[p];
            order.sort_by(|&a, &b| (point - centers[a]).norm().total_cmp(&(point - centers[b]).norm()).then(a.cmp(&b)));
            order.into_iter().find_map(|i| {
                let x = rotations[i] * point + frame.cameras[i].t;
                views[i].sample_point(&x).map(|v| v as f32)
            })
        })
        .collect();
    Ok(Panorama {
        width: grid.width,
        height: grid.height,
        data: samples.iter().map(|s| s.unwrap_or(0.0)).collect(),
        mask: samples.iter().map(Option::is_some).collect(),
    })
}

/// Rig-frame points of all valid pixels not at infinity, with the given
/// per-pixel intensity (0 when absent).
pub fn depth_to_points(depth: &InverseDepthMap, intensity: Option<&[f32]>) -> Result<Vec<PlyPoint>> {
    let grid = depth.grid;
    if let Some(i) = intensity {
        if i.len() != grid.pixels() {
            return Err(Error::DimensionMismatch(format!("{} intensities for {} pixels", i.len(), grid.pixels())));
        }
    }
    let depths = depth.depths();
    let mut points = Vec::new();
    for p in 0..grid.pixels() {
        if !depth.mask[p] || depth.index[p] == 0 {
            continue;
        }
        let x = grid.pixel_ray(p % grid.width, p / grid.width) * depths[p];
        points.push(PlyPoint {
            position: x.into(),
            intensity: intensity.map_or(0.0, |i| i[p]),
        });
    }
    Ok(points)
}

pub fn export_point_cloud(path: &Path, depth: &InverseDepthMap, intensity: Option<&[f32]>, format: PlyFormat) -> Result<usize> {
    let points = depth_to_points(depth, intensity)?;
    write_ply(path, &points, format)?;
    Ok(points.len())
}
