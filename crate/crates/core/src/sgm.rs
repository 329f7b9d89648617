//! Semi-global aggregation of the spherical cost volume, winner-takes-all
//! depth extraction and depth-index error metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostVolume;
use crate::error::{Error, Result};
use crate::sweep::SphereGrid;

/// Cost substituted for invalid cells inside the recurrences.
pub const INVALID_CELL_COST: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgmParams {
    /// Penalty for a label change of one.
    pub p1: f64,
    /// Penalty for larger label changes.
    pub p2: f64,
    /// 4 (horizontal and vertical) or 8 (plus diagonals).
    pub paths: usize,
    /// Let horizontal and diagonal paths cross the θ seam.
    pub wrap_horizontal: bool,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            p1: 0.1,
            p2: 12.0,
            paths: 8,
            wrap_horizontal: true,
        }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p1 && self.p1 <= self.p2 && self.p2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalties must satisfy 0 <= P1 <= P2, got P1 = {}, P2 = {}",
                self.p1, self.p2
            )));
        }
        if self.paths != 4 && self.paths != 8 {
            return Err(Error::InvalidArgument(format!("path count must be 4 or 8, got {}", self.paths)));
        }
        Ok(())
    }
}

/// Path direction as (column step, row step).
pub type Direction = (i64, i64);

/// Directions in their fixed summation order.
pub fn directions(paths: usize) -> &'static [Direction] {
    const ALL: [Direction; 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];
    &ALL[..paths.min(8)]
}

/// Pixel-major copy of the effective costs (invalid cells replaced).
struct Costs {
    labels: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Costs {
    fn new(vol: &CostVolume) -> Self {
        let g = &vol.grid;
        let (labels, pixels) = (g.num_spheres, g.pixels());
        let mut values = vec![0.0; pixels * labels];
        for n in 0..labels {
            for p in 0..pixels {
                let i = n * pixels + p;
                values[p * labels + n] = if vol.mask[i] { vol.data[i] as f64 } else { INVALID_CELL_COST };
            }
        }
        Self {
            labels,
            width: g.width,
            height: g.height,
            values,
        }
    }

    fn at(&self, p: usize) -> &[f64] {
        &self.values[p * self.labels..(p + 1) * self.labels]
    }
}

/// One step of the path recurrence:
/// `L(p, n) = C(p, n) + min(L(q, n), L(q, n±1) + P1, min_k L(q, k) + P2) − min_k L(q, k)`.
fn step(cost: &[f64], prev: &[f64], out: &mut [f64], p1: f64, p2: f64) {
    let labels = cost.len();
    let min_prev = prev.iter().copied().fold(f64::INFINITY, f64::min);
    for n in 0..labels {
        let mut best = prev[n].min(min_prev + p2);
        if n > 0 {
            best = best.min(prev[n - 1] + p1);
        }
        if n + 1 < labels {
            best = best.min(prev[n + 1] + p1);
        }
        out[n] = cost[n] + (best - min_prev);
    }
}

/// Index of the lexicographically least rotation of `s` (Booth's
/// algorithm), using `less`/`equal` on elements.
fn least_rotation(len: usize, cmp: impl Fn(usize, usize) -> std::cmp::Ordering) -> usize {
    use std::cmp::Ordering;
    if len == 0 {
        return 0;
    }
    let mut f = vec![-1i64; 2 * len];
    let mut k = 0usize;
    for j in 1..2 * len {
        let sj = j % len;
        let mut i = f[j - k - 1];
        while i != -1 && cmp(sj, (k + i as usize + 1) % len) != Ordering::Equal {
            if cmp(sj, (k + i as usize + 1) % len) == Ordering::Less {
                k = j - i as usize - 1;
            }
            i = f[i as usize];
        }
        if i == -1 && cmp(sj, k % len) != Ordering::Equal {
            if cmp(sj, k % len) == Ordering::Less {
                k = j;
            }
            f[j - k] = -1;
        } else {
            f[j - k] = i + 1;
        }
    }
    k % len
}

fn compare_pixels(costs: &Costs, a: usize, b: usize) -> std::cmp::Ordering {
    costs
        .at(a)
        .iter()
        .zip(costs.at(b))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// A sequence of pixels traversed by one path; circular lines are run for
/// two laps and only the second lap is kept.
struct Line {
    pixels: Vec<usize>,
    circular: bool,
}

fn lines(costs: &Costs, dir: Direction, wrap: bool) -> Vec<Line> {
    let (w, h) = (costs.width as i64, costs.height as i64);
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let mut out = Vec::new();
    match dir {
        (dx, 0) => {
            for y in 0..h {
                let mut pixels: Vec<usize> = (0..w).map(|x| idx(x, y)).collect();
                if dx < 0 {
                    pixels.reverse();
                }
                if wrap {
                    let start = least_rotation(pixels.len(), |a, b| compare_pixels(costs, pixels[a], pixels[b]));
                    pixels.rotate_left(start);
                }
                out.push(Line { pixels, circular: wrap });
            }
        }
        (0, dy) => {
            for x in 0..w {
                let mut pixels: Vec<usize> = (0..h).map(|y| idx(x, y)).collect();
                if dy < 0 {
                    pixels.reverse();
                }
                out.push(Line { pixels, circular: false });
            }
        }
        (dx, dy) => {
            let y0 = if dy > 0 { 0 } else { h - 1 };
            let x_start = if dx > 0 { 0 } else { w - 1 };
            let mut starts: Vec<(i64, i64)> = (0..w).map(|x| (x, y0)).collect();
            if !wrap {
                starts.extend((1..h).map(|k| (x_start, y0 + k * dy)));
            }
            for (sx, sy) in starts {
                let mut pixels = Vec::new();
                let (mut x, mut y) = (sx, sy);
                while (0..h).contains(&y) {
                    if wrap {
                        x = x.rem_euclid(w);
                    } else if !(0..w).contains(&x) {
                        break;
                    }
                    pixels.push(idx(x, y));
                    x += dx;
                    y += dy;
                }
                out.push(Line { pixels, circular: false });
            }
        }
    }
    out
}

/// Runs the recurrence along one line; returns L for each pixel of the line.
fn run_line(costs: &Costs, line: &Line, p1: f64, p2: f64) -> Vec<f64> {
    let labels = costs.labels;
    let len = line.pixels.len();
    let mut out = vec![0.0; len * labels];
    let mut prev = costs.at(line.pixels[0]).to_vec();
    let mut cur = vec![0.0; labels];
    let (steps, keep_from) = if line.circular { (2 * len, len) } else { (len, 0) };
    if keep_from == 0 {
        out[..labels].copy_from_slice(&prev);
    }
    for k in 1..steps {
        step(costs.at(line.pixels[k % len]), &prev, &mut cur, p1, p2);
        std::mem::swap(&mut prev, &mut cur);
        if k >= keep_from {
            let pos = k % len;
            out[pos * labels..(pos + 1) * labels].copy_from_slice(&prev);
        }
    }
    out
}

/// Aggregated costs of a single path direction, pixel-major.
fn aggregate_direction(costs: &Costs, dir: Direction, params: &SgmParams) -> Vec<f64> {
    let lines = lines(costs, dir, params.wrap_horizontal);
    let results: Vec<Vec<f64>> = lines.par_iter().map(|line| run_line(costs, line, params.p1, params.p2)).collect();
    let labels = costs.labels;
    let mut out = vec![0.0; costs.values.len()];
    for (line, values) in lines.iter().zip(results) {
        for (k, &p) in line.pixels.iter().enumerate() {
            out[p * labels..(p + 1) * labels].copy_from_slice(&values[k * labels..(k + 1) * labels]);
        }
    }
    out
}

/// Single-direction aggregation, n-major like the input volume.
pub fn aggregate_path(vol: &CostVolume, dir: Direction, params: &SgmParams) -> Result<Vec<f64>> {
    params.validate()?;
    let costs = Costs::new(vol);
    Ok(to_n_major(&aggregate_direction(&costs, dir, params), &vol.grid))
}

fn to_n_major(pixel_major: &[f64], grid: &SphereGrid) -> Vec<f64> {
    let (labels, pixels) = (grid.num_spheres, grid.pixels());
    let mut out = vec![0.0; pixel_major.len()];
    for p in 0..pixels {
        for n in 0..labels {
            out[n * pixels + p] = pixel_major[p * labels + n];
        }
    }
    out
}

/// Sum of the path-wise aggregated costs over all path directions, added
/// in the fixed order of [`directions`]. Invalid input cells enter the
/// recurrences with cost 1 and stay invalid in the output. Aggregated
/// values are not limited to `[0, 1]`.
pub fn sgm_aggregate(vol: &CostVolume, params: &SgmParams) -> Result<CostVolume> {
    params.validate()?;
    if vol.grid.num_spheres < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least 2 spheres, got {}",
            vol.grid.num_spheres
        )));
    }
    let costs = Costs::new(vol);
    let mut total = vec![0.0f64; costs.values.len()];
    for &dir in directions(params.paths) {
        let path = aggregate_direction(&costs, dir, params);
        for (t, v) in total.iter_mut().zip(&path) {
            *t += v;
        }
    }
    let data = to_n_major(&total, &vol.grid).into_iter().map(|v| v as f32).collect();
    CostVolume::new(vol.grid, data, vol.mask.clone())
}

/// Per-pixel sphere indices with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap {
    pub grid: SphereGrid,
    /// Winning sphere index per pixel (row-major); 0 is the sphere at
    /// infinity.
    pub index: Vec<u32>,
    pub mask: Vec<bool>,
}

impl InverseDepthMap {
    pub fn new(grid: SphereGrid, index: Vec<u32>, mask: Vec<bool>) -> Result<Self> {
        if index.len() != grid.pixels() || mask.len() != grid.pixels() {
            return Err(Error::DimensionMismatch(format!(
                "{} indices for a {}x{} grid",
                index.len(),
                grid.width,
                grid.height
            )));
        }
        if let Some(&n) = index.iter().zip(&mask).find(|(&n, &m)| m && n as usize >= grid.num_spheres).map(|(n, _)| n) {
            return Err(Error::InvalidArgument(format!("sphere index {n} out of range 0..{}", grid.num_spheres)));
        }
        Ok(Self { grid, index, mask })
    }

    /// Ground truth from metric depths (infinite for the sky); pixels with
    /// NaN or non-positive depth are invalid.
    pub fn from_depths(grid: SphereGrid, depths: &[f64]) -> Result<Self> {
        if depths.len() != grid.pixels() {
            return Err(Error::DimensionMismatch(format!("{} depths for {} pixels", depths.len(), grid.pixels())));
        }
        let mask: Vec<bool> = depths.iter().map(|&d| d > 0.0).collect();
        let index = depths
            .iter()
            .zip(&mask)
            .map(|(&d, &m)| if m { grid.index_for_depth(d) as u32 } else { 0 })
            .collect();
        Self::new(grid, index, mask)
    }

    /// Inverse depth `d_{n*}` per pixel (NaN where invalid).
    pub fn inv_depths(&self) -> Vec<f64> {
        let table = self.grid.inverse_depths();
        self.index
            .iter()
            .zip(&self.mask)
            .map(|(&n, &m)| if m { table[n as usize] } else { f64::NAN })
            .collect()
    }

    /// Metric depth `1 / d_{n*}` per pixel (NaN where invalid).
    pub fn depths(&self) -> Vec<f64> {
        self.inv_depths().into_iter().map(|d| 1.0 / d).collect()
    }
}

/// Winner-takes-all over valid cells; ties go to the smallest index.
pub fn wta(vol: &CostVolume) -> InverseDepthMap {
    let g = vol.grid;
    let pixels = g.pixels();
    let mut index = vec![0u32; pixels];
    let mut mask = vec![false; pixels];
    for p in 0..pixels {
        let mut best: Option<(f32, usize)> = None;
        for n in 0..g.num_spheres {
            let i = n * pixels + p;
            if vol.mask[i] && best.is_none_or(|(b, _)| vol.data[i] < b) {
                best = Some((vol.data[i], n));
            }
        }
        if let Some((_, n)) = best {
            index[p] = n as u32;
            mask[p] = true;
        }
    }
    InverseDepthMap { grid: g, index, mask }
}

/// Per-pixel index error in percent of the sphere count.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

/// `e(p) = 100 / N · |n*(p) − n̂(p)|`, valid where both maps are.
pub fn error_map(pred: &InverseDepthMap, gt: &InverseDepthMap) -> Result<ErrorMap> {
    let (a, b) = (&pred.grid, &gt.grid);
    if (a.width, a.height, a.num_spheres) != (b.width, b.height, b.num_spheres) {
        return Err(Error::DimensionMismatch(format!(
            "prediction grid {}x{}x{} differs from ground truth {}x{}x{}",
            a.width, a.height, a.num_spheres, b.width, b.height, b.num_spheres
        )));
    }
    let scale = 100.0 / a.num_spheres as f64;
    let mask: Vec<bool> = pred.mask.iter().zip(&gt.mask).map(|(x, y)| *x && *y).collect();
    let values = pred
        .index
        .iter()
        .zip(&gt.index)
        .zip(&mask)
        .map(|((&x, &y), &m)| if m { scale * (x as f64 - y as f64).abs() } else { 0.0 })
        .collect();
    Ok(ErrorMap {
        width: a.width,
        height: a.height,
        values,
        mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    /// Percentage of valid pixels with error above 1, 3 and 5.
    pub pct_gt1: f64,
    pub pct_gt3: f64,
    pub pct_gt5: f64,
    pub mae: f64,
    pub rms: f64,
    pub valid_pixels: usize,
}

pub fn compute_metrics(errors: &ErrorMap) -> Result<DepthMetrics> {
    let valid: Vec<f64> = errors.values.iter().zip(&errors.mask).filter(|(_, &m)| m).map(|(&e, _)| e).collect();
    metrics_of(&valid)
}

/// Metrics of a list of errors.
pub fn metrics_of(errors: &[f64]) -> Result<DepthMetrics> {
    if errors.is_empty() {
        return Err(Error::Empty("no valid pixels to evaluate"));
    }
    let n = errors.len() as f64;
    let pct = |t: f64| errors.iter().filter(|&&e| e > t).count() as f64 * 100.0 / n;
    Ok(DepthMetrics {
        pct_gt1: pct(1.0),
        pct_gt3: pct(3.0),
        pct_gt5: pct(5.0),
        mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
        rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        valid_pixels: errors.len(),
    })
}
