//! Pairwise matching costs on spherical images and their fusion into a
//! cost volume.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{read_ocsv, OcsvVolume};
use crate::sweep::{warp_all, FisheyeView, RigFrame, SphereGrid, SphericalImage};

/// Patches with variance below this are considered textureless.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default ZNCC window side length.
pub const DEFAULT_WINDOW: usize = 9;

/// Default minimum fraction of pixels two cameras must share on a sphere
/// for their pair to contribute.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.05;

/// Standardizes the valid entries of `data` to zero mean and unit
/// variance; invalid entries become 0. A constant input becomes all zeros
/// and `true` is returned.
pub fn normalize_values(data: &mut [f32], mask: &[bool]) -> Result<bool> {
    if data.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!("{} samples but {} mask entries", data.len(), mask.len())));
    }
    let valid: Vec<f64> = data.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64).collect();
    if valid.is_empty() {
        return Err(Error::Empty("image has no valid pixels"));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let var = valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / valid.len() as f64;
    let degenerate = !(var > 0.0);
    let inv_std = if degenerate { 0.0 } else { 1.0 / var.sqrt() };
    for (v, &m) in data.iter_mut().zip(mask) {
        *v = if m { ((*v as f64 - mean) * inv_std) as f32 } else { 0.0 };
    }
    Ok(degenerate)
}

/// Per-image standardization of a spherical image. The flag reports a
/// constant (degenerate) image, which comes back as all zeros.
pub fn normalize_image(img: &SphericalImage) -> Result<(SphericalImage, bool)> {
    let mut out = img.clone();
    let degenerate = normalize_values(&mut out.data, &out.mask)?;
    Ok((out, degenerate))
}

/// W×H matching costs in `[0, 1]` with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl CostMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            mask: vec![false; width * height],
        }
    }
}

/// Zero-mean normalized cross-correlation cost `(1 − ZNCC) / 2` over a
/// `window`×`window` patch. Columns wrap around the θ seam; windows that
/// leave the top or bottom row, touch an invalid pixel, or have variance
/// below [`VARIANCE_FLOOR`] in either image are invalid.
pub fn zncc_cost(a: &SphericalImage, b: &SphericalImage, window: usize) -> Result<CostMap> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "spherical images are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window must be odd and at least 3, got {window}")));
    }
    let (w, h) = (a.width, a.height);
    let r = window / 2;
    let mut out = CostMap::invalid(w, h);
    if h < window || w < window {
        return Ok(out);
    }
    let count = (window * window) as f64;
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (r..h - r)
        .into_par_iter()
        .map(|row| {
            // Vertical sums per column, each accumulated top to bottom.
            let mut cols = vec![[0.0f64; 6]; w];
            for (x, col) in cols.iter_mut().enumerate() {
                for y in row - r..=row + r {
                    let i = y * w + x;
                    let (va, vb) = (a.data[i] as f64, b.data[i] as f64);
                    col[0] += va;
                    col[1] += vb;
                    col[2] += va * va;
                    col[3] += vb * vb;
                    col[4] += va * vb;
                    col[5] += f64::from(u8::from(!(a.mask[i] && b.mask[i])));
                }
            }
            let mut data = vec![0.0f32; w];
            let mut mask = vec![false; w];
            for x in 0..w {
                let mut s = [0.0f64; 6];
                for dx in 0..window {
                    let col = &cols[(x + w + dx - r) % w];
                    for k in 0..6 {
                        s[k] += col[k];
                    }
                }
                if s[5] > 0.0 {
                    continue;
                }
                let var_a = s[2] / count - (s[0] / count).powi(2);
                let var_b = s[3] / count - (s[1] / count).powi(2);
                if var_a < VARIANCE_FLOOR || var_b < VARIANCE_FLOOR {
                    continue;
                }
                let cov = s[4] / count - s[0] * s[1] / (count * count);
                let z = (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0);
                data[x] = ((1.0 - z) / 2.0) as f32;
                mask[x] = true;
            }
            (data, mask)
        })
        .collect();
    for (k, (data, mask)) in rows.into_iter().enumerate() {
        let at = (k + r) * w;
        out.data[at..at + w].copy_from_slice(&data);
        out.mask[at..at + w].copy_from_slice(&mask);
    }
    Ok(out)
}

/// Per-pixel mean of the maps valid at that pixel; invalid where none is.
/// Values are summed in ascending order, so the result does not depend on
/// the order of `maps`.
pub fn fuse(maps: &[&CostMap]) -> Result<CostMap> {
    let first = maps.first().ok_or(Error::Empty("no cost maps to fuse"))?;
    if maps.iter().any(|m| (m.width, m.height) != (first.width, first.height)) {
        return Err(Error::DimensionMismatch("cost maps differ in size".into()));
    }
    let mut out = CostMap::invalid(first.width, first.height);
    let mut values = Vec::with_capacity(maps.len());
    for p in 0..first.data.len() {
        values.clear();
        values.extend(maps.iter().filter(|m| m.mask[p]).map(|m| m.data[p]));
        if values.is_empty() {
            continue;
        }
        values.sort_by(f32::total_cmp);
        let sum: f64 = values.iter().map(|&v| v as f64).sum();
        out.data[p] = (sum / values.len() as f64) as f32;
        out.mask[p] = true;
    }
    Ok(out)
}

/// Unordered camera pairs and the overlap a pair needs on a sphere to
/// contribute there.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pairs: Vec<(usize, usize)>,
    pub min_overlap: f64,
}

impl PairSelection {
    /// All unordered pairs of `cameras` cameras.
    pub fn all(cameras: usize) -> Self {
        let pairs = (0..cameras).flat_map(|i| (i + 1..cameras).map(move |j| (i, j))).collect();
        Self {
            pairs,
            min_overlap: DEFAULT_MIN_OVERLAP,
        }
    }

    /// Explicit pairs, stored as `(min, max)` in the given order.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>, min_overlap: f64) -> Result<Self> {
        let mut out = Vec::new();
        for (i, j) in pairs {
            if i == j {
                return Err(Error::InvalidArgument(format!("pair ({i}, {j}) repeats a camera")));
            }
            let p = (i.min(j), i.max(j));
            if out.contains(&p) {
                return Err(Error::InvalidArgument(format!("pair ({}, {}) listed twice", p.0, p.1)));
            }
            out.push(p);
        }
        if out.is_empty() {
            return Err(Error::Empty("no camera pairs selected"));
        }
        if !(0.0..=1.0).contains(&min_overlap) {
            return Err(Error::InvalidArgument(format!("overlap fraction {min_overlap} outside [0, 1]")));
        }
        Ok(Self { pairs: out, min_overlap })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Matching cost between two spherical images of the same sphere.
pub trait PairCost: Sync {
    fn cost_map(&self, pair: (usize, usize), a: &SphericalImage, b: &SphericalImage) -> Result<CostMap>;
}

/// ZNCC cost with a square window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zncc {
    pub window: usize,
}

impl Default for Zncc {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW }
    }
}

impl PairCost for Zncc {
    fn cost_map(&self, _pair: (usize, usize), a: &SphericalImage, b: &SphericalImage) -> Result<CostMap> {
        zncc_cost(a, b, self.window)
    }
}

/// W×H×N cost volume stored as n-major slices of row-major maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub grid: SphereGrid,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl CostVolume {
    pub fn new(grid: SphereGrid, data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        let len = grid.pixels() * grid.num_spheres;
        if data.len() != len || mask.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "{} costs and {} mask entries for a {}x{}x{} volume",
                data.len(),
                mask.len(),
                grid.width,
                grid.height,
                grid.num_spheres
            )));
        }
        Ok(Self { grid, data, mask })
    }

    pub fn index(&self, w: usize, h: usize, n: usize) -> usize {
        (n * self.grid.height + h) * self.grid.width + w
    }

    pub fn get(&self, w: usize, h: usize, n: usize) -> Option<f32> {
        let i = self.index(w, h, n);
        self.mask[i].then_some(self.data[i])
    }

    pub fn slice(&self, n: usize) -> CostMap {
        let len = self.grid.pixels();
        CostMap {
            width: self.grid.width,
            height: self.grid.height,
            data: self.data[n * len..(n + 1) * len].to_vec(),
            mask: self.mask[n * len..(n + 1) * len].to_vec(),
        }
    }

    pub fn from_slices(grid: SphereGrid, slices: Vec<CostMap>) -> Result<Self> {
        if slices.len() != grid.num_spheres || slices.iter().any(|s| (s.width, s.height) != (grid.width, grid.height)) {
            return Err(Error::DimensionMismatch("cost slices do not match the grid".into()));
        }
        let mut data = Vec::with_capacity(grid.pixels() * grid.num_spheres);
        let mut mask = Vec::with_capacity(data.capacity());
        for s in slices {
            data.extend(s.data);
            mask.extend(s.mask);
        }
        Ok(Self { grid, data, mask })
    }

    pub fn to_ocsv(&self) -> OcsvVolume {
        OcsvVolume {
            width: self.grid.width,
            height: self.grid.height,
            depth: self.grid.num_spheres,
            data: self.data.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn from_ocsv(vol: OcsvVolume, grid: SphereGrid) -> Result<Self> {
        check_dims(&vol, &grid)?;
        Self::new(grid, vol.data, vol.mask)
    }
}

fn check_dims(vol: &OcsvVolume, grid: &SphereGrid) -> Result<()> {
    if (vol.width, vol.height, vol.depth) != (grid.width, grid.height, grid.num_spheres) {
        return Err(Error::DimensionMismatch(format!(
            "cost volume is {}x{}x{} but the grid is {}x{}x{}",
            vol.width, vol.height, vol.depth, grid.width, grid.height, grid.num_spheres
        )));
    }
    Ok(())
}

/// Fused cost slice for sphere `n` from already-warped images.
pub fn fused_slice(images: &[SphericalImage], n: usize, cost: &dyn PairCost, pairs: &PairSelection) -> Result<CostMap> {
    let first = images.first().ok_or(Error::Empty("no spherical images"))?;
    let pixels = first.width * first.height;
    let mut maps = Vec::new();
    for &(i, j) in pairs.pairs() {
        let (a, b) = match (images.get(i), images.get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidArgument(format!("pair ({i}, {j}) names a missing camera"))),
        };
        let shared = a.mask.iter().zip(&b.mask).filter(|(x, y)| **x && **y).count();
        if (shared as f64) < pairs.min_overlap * pixels as f64 || shared == 0 {
            continue;
        }
        let map = cost
            .cost_map((i, j), a, b)
            .map_err(|e| e.context(format!("cost of pair ({i}, {j}) on sphere {n}")))?;
        maps.push(map);
    }
    if maps.is_empty() {
        return Ok(CostMap::invalid(first.width, first.height));
    }
    fuse(&maps.iter().collect::<Vec<_>>())
}

/// Warps all cameras on every sphere, evaluates `cost` on the selected
/// pairs and averages the valid pair costs per pixel.
pub fn build_cost_volume(views: &[FisheyeView], frame: &RigFrame, grid: &SphereGrid, cost: &dyn PairCost, pairs: &PairSelection) -> Result<CostVolume> {
    grid.validate()?;
    if views.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least two cameras, got {}", views.len())));
    }
    cost_volume_from_spheres(grid, cost, pairs, |n| warp_all(views, frame, n, grid))
}

/// Cost volume from per-sphere spherical images supplied by `images(n)`
/// (all cameras, in camera order), e.g. read back from OSPH files.
pub fn cost_volume_from_spheres<F>(grid: &SphereGrid, cost: &dyn PairCost, pairs: &PairSelection, images: F) -> Result<CostVolume>
where
    F: Fn(usize) -> Result<Vec<SphericalImage>> + Sync,
{
    grid.validate()?;
    let slices = (0..grid.num_spheres)
        .into_par_iter()
        .map(|n| {
            let images = images(n)?;
            if let Some(img) = images.iter().find(|i| (i.width, i.height) != (grid.width, grid.height)) {
                return Err(Error::DimensionMismatch(format!(
                    "spherical image of camera {} on sphere {n} is {}x{}, grid is {}x{}",
                    img.camera, img.width, img.height, grid.width, grid.height
                )));
            }
            fused_slice(&images, n, cost, pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    CostVolume::from_slices(*grid, slices)
}

/// Precomputed per-pair cost volumes, e.g. from a learned cost function.
/// A pixel is valid when the external map and both spherical images are.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCosts {
    pub volumes: BTreeMap<(usize, usize), CostVolume>,
}

impl PairCost for ExternalCosts {
    fn cost_map(&self, pair: (usize, usize), a: &SphericalImage, b: &SphericalImage) -> Result<CostMap> {
        let vol = self
            .volumes
            .get(&pair)
            .ok_or_else(|| Error::InvalidArgument(format!("no external costs for pair ({}, {})", pair.0, pair.1)))?;
        if a.sphere != b.sphere || a.sphere >= vol.grid.num_spheres {
            return Err(Error::InvalidArgument(format!("sphere {} not in external costs", a.sphere)));
        }
        let mut map = vol.slice(a.sphere);
        if (map.width, map.height) != (a.width, a.height) {
            return Err(Error::DimensionMismatch("external cost map and spherical image differ in size".into()));
        }
        for (p, m) in map.mask.iter_mut().enumerate() {
            *m = *m && a.mask[p] && b.mask[p];
            if !*m {
                map.data[p] = 0.0;
            }
        }
        Ok(map)
    }
}

/// Path of the external cost file for a camera pair inside `dir`.
pub fn external_cost_path(dir: &Path, pair: (usize, usize)) -> std::path::PathBuf {
    dir.join(format!("pair_{}_{}.ocsv", pair.0, pair.1))
}

/// Loads `pair_<i>_<j>.ocsv` for every selected pair from `dir`. Each file
/// holds one W×H×N volume matching `grid`; valid costs must lie in [0, 1].
pub fn load_external_cost_maps(dir: &Path, grid: &SphereGrid, pairs: &PairSelection) -> Result<ExternalCosts> {
    let mut volumes = BTreeMap::new();
    for &pair in pairs.pairs() {
        let path = external_cost_path(dir, pair);
        let vol = read_ocsv(&path)?;
        check_dims(&vol, grid).map_err(|e| e.context(path.display().to_string()))?;
        if let Some(v) = vol.data.iter().zip(&vol.mask).find(|(v, &m)| m && !(0.0..=1.0).contains(*v)) {
            return Err(Error::format(&path, format!("valid cost {} outside [0, 1]", v.0)));
        }
        volumes.insert(pair, CostVolume::new(*grid, vol.data, vol.mask)?);
    }
    Ok(ExternalCosts { volumes })
}
