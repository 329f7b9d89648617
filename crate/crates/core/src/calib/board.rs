use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::PixelPoint;
use crate::error::{Error, Result};

/// Minimum number of corners per (camera, capture) record.
pub const MIN_CORNERS: usize = 6;

/// Planar checkerboard; corners lie on the board's `z = 0` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardSpec {
    /// Interior corners per row.
    pub cols: usize,
    /// Interior corners per column.
    pub rows: usize,
    /// Square edge length in meters.
    pub square_m: f64,
}

impl CheckerboardSpec {
    pub fn new(cols: usize, rows: usize, square_m: f64) -> Result<Self> {
        let spec = Self { cols, rows, square_m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols < 2 || self.rows < 2 {
            return Err(Error::InvalidArgument(format!(
                "checkerboard needs at least 2x2 corners, got {}x{}",
                self.cols, self.rows
            )));
        }
        if !(self.square_m > 0.0 && self.square_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("square size must be positive, got {}", self.square_m)));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.cols * self.rows
    }

    /// Board-frame coordinates of corner `id` (row-major).
    pub fn corner(&self, id: usize) -> Vector3<f64> {
        let (r, c) = (id / self.cols, id % self.cols);
        Vector3::new(c as f64 * self.square_m, r as f64 * self.square_m, 0.0)
    }

    pub fn corners(&self) -> Vec<Vector3<f64>> {
        (0..self.corner_count()).map(|id| self.corner(id)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub id: usize,
    pub pixel: PixelPoint,
}

/// Corner detections keyed by (camera, capture).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    records: BTreeMap<(usize, usize), Vec<CornerObservation>>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, camera: usize, capture: usize, corners: Vec<CornerObservation>) -> Result<()> {
        if corners.len() < MIN_CORNERS {
            return Err(Error::InvalidArgument(format!(
                "camera {camera} capture {capture}: {} corners, need at least {MIN_CORNERS}",
                corners.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &corners {
            if !seen.insert(c.id) {
                return Err(Error::InvalidArgument(format!(
                    "camera {camera} capture {capture}: duplicate corner id {}",
                    c.id
                )));
            }
            if !(c.pixel.u.is_finite() && c.pixel.v.is_finite()) {
                return Err(Error::NonFinite("corner pixel"));
            }
        }
        self.records.insert((camera, capture), corners);
        Ok(())
    }

    pub fn get(&self, camera: usize, capture: usize) -> Option<&[CornerObservation]> {
        self.records.get(&(camera, capture)).map(Vec::as_slice)
    }

    pub fn records(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<CornerObservation>)> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_cameras(&self) -> usize {
        self.records.keys().map(|&(i, _)| i + 1).max().unwrap_or(0)
    }

    pub fn captures(&self) -> BTreeSet<usize> {
        self.records.keys().map(|&(_, k)| k).collect()
    }

    pub fn corner_total(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    /// Checks that all corner ids exist on `board`.
    pub fn validate_against(&self, board: &CheckerboardSpec) -> Result<()> {
        for (&(i, k), corners) in &self.records {
            if let Some(c) = corners.iter().find(|c| c.id >= board.corner_count()) {
                return Err(Error::InvalidArgument(format!(
                    "camera {i} capture {k}: corner id {} outside {}x{} board",
                    c.id, board.cols, board.rows
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners(n: usize) -> Vec<CornerObservation> {
        (0..n)
            .map(|id| CornerObservation {
                id,
                pixel: PixelPoint::new(id as f64, 0.0),
            })
            .collect()
    }

    #[test]
    fn corner_layout() {
        let b = CheckerboardSpec::new(12, 10, 0.06).unwrap();
        assert_eq!(b.corner_count(), 120);
        assert_eq!(b.corner(13), Vector3::new(0.06, 0.06, 0.0));
        assert!(CheckerboardSpec::new(1, 10, 0.06).is_err());
        assert!(CheckerboardSpec::new(3, 3, 0.0).is_err());
    }

    #[test]
    fn record_rules() {
        let mut obs = ObservationSet::new();
        assert!(obs.insert(0, 0, corners(5)).is_err());
        let mut dup = corners(6);
        dup[5].id = 0;
        assert!(obs.insert(0, 0, dup).is_err());
        obs.insert(1, 3, corners(6)).unwrap();
        assert_eq!(obs.num_cameras(), 2);
        let small = CheckerboardSpec::new(2, 2, 0.1).unwrap();
        assert!(obs.validate_against(&small).is_err());
    }
}
