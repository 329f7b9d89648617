//! Grayscale images with float intensities on the 8-bit scale.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Row-major grayscale image. Intensities use the 8-bit scale `[0, 255]`
/// regardless of the file bit depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at pixel coordinates (pixel centers at integers).
    /// Returns `None` unless all four neighbors exist and are marked valid
    /// in `mask` (same layout as the image).
    pub fn sample_masked(&self, mask: &[bool], u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) || self.width < 2 || self.height < 2 {
            return None;
        }
        let (w1, h1) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if u > w1 || v > h1 {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let i = y0 * self.width + x0;
        let j = i + self.width;
        if !(mask[i] && mask[i + 1] && mask[j] && mask[j + 1]) {
            return None;
        }
        let d = &self.data;
        let top = d[i] as f64 * (1.0 - fx) + d[i + 1] as f64 * fx;
        let bottom = d[j] as f64 * (1.0 - fx) + d[j + 1] as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Loads an 8- or 16-bit PNG or PGM; color is converted to luminance.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data = match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
                img.to_luma8().into_raw().into_iter().map(f32::from).collect()
            }
            _ => img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 257.0).collect(),
        };
        Ok(Self { width, height, data })
    }

    /// Saves as a 16-bit grayscale PNG (values clamped to `[0, 255]`).
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let raw: Vec<u16> = self.data.iter().map(|&v| (v.clamp(0.0, 255.0) * 257.0).round() as u16).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Saves as an 8-bit grayscale PNG or PGM (by extension), values clamped
    /// to `[0, 255]`.
    pub fn save_8bit(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|&v| v.clamp(0.0, 255.0).round() as u8).collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_affine_ramps() {
        let mut img = GrayImage::new(5, 4);
        for y in 0..4 {
            for x in 0..5 {
                img.set(x, y, (3 * x + 7 * y) as f32);
            }
        }
        let mask = vec![true; 20];
        assert_eq!(img.sample_masked(&mask, 1.25, 2.5), Some(3.75 + 17.5));
        assert_eq!(img.sample_masked(&mask, 4.0, 3.0), Some(33.0));
        assert_eq!(img.sample_masked(&mask, 4.01, 0.0), None);
        let mut holes = mask.clone();
        holes[2 * 5 + 2] = false;
        assert_eq!(img.sample_masked(&holes, 0.5, 0.5), Some(3.0 * 0.5 + 7.0 * 0.5));
        assert_eq!(img.sample_masked(&holes, 1.5, 1.5), None);
        assert_eq!(img.sample_masked(&holes, 2.0, 2.5), None);
    }

    #[test]
    fn png16_round_trip_is_lossless_on_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 20.0).collect();
        let img = GrayImage::from_vec(4, 3, data).unwrap();
        img.save_png16(&path).unwrap();
        assert_eq!(GrayImage::load(&path).unwrap(), img);
        let pgm = dir.path().join("a.pgm");
        img.save_8bit(&pgm).unwrap();
        assert_eq!(GrayImage::load(&pgm).unwrap(), img);
    }
}
