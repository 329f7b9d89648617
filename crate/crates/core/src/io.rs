//! File formats: rig calibration JSON, corner observations JSON, OCSV cost
//! volumes, OSPH spherical images, depth maps and PLY point clouds.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calib::{CheckerboardSpec, CornerObservation, ObservationSet};
use crate::cost::CostVolume;
use crate::camera::{FisheyeIntrinsics, IntrinsicsRecord};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::sgm::InverseDepthMap;
use crate::sweep::{SphereGrid, SphericalImage};

pub const OCSV_MAGIC: &[u8; 4] = b"OCSV";
pub const OSPH_MAGIC: &[u8; 4] = b"OSPH";
pub const BINARY_VERSION: u32 = 1;
pub const RIG_FILE_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Little-endian header reader over a byte buffer.
struct Header<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Header<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 4], fields: usize) -> Result<Self> {
        let need = 8 + 4 * fields;
        if bytes.len() < need {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: need as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != magic {
            return Err(Error::format(
                path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&bytes[..4]),
                    std::str::from_utf8(magic).unwrap()
                ),
            ));
        }
        let mut h = Self { path, bytes, at: 4 };
        let version = h.u32();
        if version != BINARY_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}, expected {BINARY_VERSION}")));
        }
        Ok(h)
    }

    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.at..self.at + 4].try_into().unwrap());
        self.at += 4;
        v
    }

    /// Reads `count` floats and `count` validity bytes; the file must end
    /// right after them.
    fn payload(&self, count: usize) -> Result<(Vec<f32>, Vec<bool>)> {
        let expected = self.at as u64 + 5 * count as u64;
        if self.bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected,
                actual: self.bytes.len() as u64,
            });
        }
        let floats = &self.bytes[self.at..self.at + 4 * count];
        let data = floats.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut mask = Vec::with_capacity(count);
        for &b in &self.bytes[self.at + 4 * count..] {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                other => return Err(Error::format(self.path, format!("validity byte {other} is neither 0 nor 1"))),
            }
        }
        Ok((data, mask))
    }
}

fn push_payload(out: &mut Vec<u8>, data: &[f32], mask: &[bool]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(mask.iter().map(|&m| u8::from(m)));
}

/// Contents of an OCSV file: a W×H×N float volume (n-major slices of
/// row-major maps) with one validity byte per value.
#[derive(Debug, Clone, PartialEq)]
pub struct OcsvVolume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

pub fn write_ocsv(path: &Path, vol: &OcsvVolume) -> Result<()> {
    let count = vol.width * vol.height * vol.depth;
    if vol.data.len() != count || vol.mask.len() != count {
        return Err(Error::DimensionMismatch(format!(
            "{} values and {} mask entries for a {}x{}x{} volume",
            vol.data.len(),
            vol.mask.len(),
            vol.width,
            vol.height,
            vol.depth
        )));
    }
    let mut out = Vec::with_capacity(20 + 5 * count);
    out.extend_from_slice(OCSV_MAGIC);
    for v in [BINARY_VERSION, dim_u32(vol.width)?, dim_u32(vol.height)?, dim_u32(vol.depth)?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_payload(&mut out, &vol.data, &vol.mask);
    write_bytes(path, &out)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("dimension {v} does not fit in 32 bits")))
}

pub fn read_ocsv(path: &Path) -> Result<OcsvVolume> {
    let bytes = read_bytes(path)?;
    let mut h = Header::new(path, &bytes, OCSV_MAGIC, 4)?;
    let (width, height, depth) = (h.u32() as usize, h.u32() as usize, h.u32() as usize);
    let (data, mask) = h.payload(width * height * depth)?;
    Ok(OcsvVolume {
        width,
        height,
        depth,
        data,
        mask,
    })
}

pub fn write_osph(path: &Path, img: &SphericalImage) -> Result<()> {
    let count = img.width * img.height;
    if img.data.len() != count || img.mask.len() != count {
        return Err(Error::DimensionMismatch("spherical image buffers do not match its size".into()));
    }
    let mut out = Vec::with_capacity(24 + 5 * count);
    out.extend_from_slice(OSPH_MAGIC);
    for v in [
        BINARY_VERSION,
        dim_u32(img.width)?,
        dim_u32(img.height)?,
        dim_u32(img.camera)?,
        dim_u32(img.sphere)?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_payload(&mut out, &img.data, &img.mask);
    write_bytes(path, &out)
}

pub fn read_osph(path: &Path) -> Result<SphericalImage> {
    let bytes = read_bytes(path)?;
    let mut h = Header::new(path, &bytes, OSPH_MAGIC, 5)?;
    let (width, height, camera, sphere) = (h.u32() as usize, h.u32() as usize, h.u32() as usize, h.u32() as usize);
    let (data, mask) = h.payload(width * height)?;
    Ok(SphericalImage {
        width,
        height,
        camera,
        sphere,
        data,
        mask,
    })
}

/// File name of the spherical image of `camera` on `sphere`.
pub fn osph_name(camera: usize, sphere: usize) -> String {
    format!("cam{camera}_sphere{sphere:04}.osph")
}

/// Reads the spherical images of cameras `0..cameras` on `sphere` from
/// `dir`, checking that each file's header matches its name.
pub fn read_osph_sphere(dir: &Path, cameras: usize, sphere: usize) -> Result<Vec<SphericalImage>> {
    (0..cameras)
        .map(|c| {
            let path = dir.join(osph_name(c, sphere));
            let img = read_osph(&path)?;
            if (img.camera, img.sphere) != (c, sphere) {
                return Err(Error::format(
                    &path,
                    format!("header names camera {} sphere {}", img.camera, img.sphere),
                ));
            }
            Ok(img)
        })
        .collect()
}

/// Number of cameras with a sphere-0 image in `dir` (consecutive from 0).
pub fn count_osph_cameras(dir: &Path) -> usize {
    (0..).take_while(|&c| dir.join(osph_name(c, 0)).is_file()).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub r: [f64; 3],
    pub t: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            r: p.r.into(),
            t: p.t.into(),
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(p: &PoseRecord) -> Self {
        Pose {
            r: Vector3::from(p.r),
            t: Vector3::from(p.t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    #[serde(flatten)]
    pub intrinsics: IntrinsicsRecord,
    /// World(camera 0)-to-camera pose.
    pub pose: PoseRecord,
}

/// How the rig frame is derived from the camera poses, plus the resulting
/// rig-to-world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFrameRecord {
    pub definition: String,
    pub rig_to_world: PoseRecord,
}

pub const RIG_FRAME_DEFINITION: &str =
    "origin: centroid of camera centers; y: normal of the least-squares plane through the centers, toward the mean camera up axis; x: camera 0 optical axis projected onto that plane; z = x cross y";

/// Rig calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub version: u32,
    pub cameras: Vec<RigCamera>,
    pub rig_frame: RigFrameRecord,
    /// Optional calibration residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_px: Option<Vec<f64>>,
}

impl RigFile {
    /// Builds the file from calibrated cameras; the rig frame is derived
    /// from the poses.
    pub fn new(intrinsics: &[FisheyeIntrinsics], poses: &[Pose]) -> Result<Self> {
        if intrinsics.len() != poses.len() {
            return Err(Error::DimensionMismatch(format!("{} intrinsics for {} poses", intrinsics.len(), poses.len())));
        }
        let frame = crate::sweep::build_rig_frame(poses)?;
        Ok(Self {
            version: RIG_FILE_VERSION,
            cameras: intrinsics
                .iter()
                .zip(poses)
                .map(|(i, p)| RigCamera {
                    intrinsics: i.to_record(),
                    pose: p.into(),
                })
                .collect(),
            rig_frame: RigFrameRecord {
                definition: RIG_FRAME_DEFINITION.into(),
                rig_to_world: (&frame.rig_to_world).into(),
            },
            rmse_px: None,
        })
    }

    pub fn intrinsics(&self) -> Result<Vec<FisheyeIntrinsics>> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(i, c)| FisheyeIntrinsics::from_record(&c.intrinsics).map_err(|e| e.context(format!("camera {i}"))))
            .collect()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| Pose::from(&c.pose)).collect()
    }

    /// Rig frame derived from the camera poses.
    pub fn frame(&self) -> Result<crate::sweep::RigFrame> {
        crate::sweep::build_rig_frame(&self.poses())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        if file.version != RIG_FILE_VERSION {
            return Err(Error::format(path, format!("unsupported rig file version {}", file.version)));
        }
        if file.cameras.is_empty() {
            return Err(Error::format(path, "rig file lists no cameras"));
        }
        file.intrinsics().map_err(|e| e.context(path.display().to_string()))?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerRecord {
    pub camera: usize,
    pub capture: usize,
    pub corners: Vec<CornerObservation>,
}

/// Checkerboard description and corner detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornersFile {
    pub board: CheckerboardSpec,
    pub records: Vec<CornerRecord>,
}

impl CornersFile {
    pub fn from_observations(board: CheckerboardSpec, obs: &ObservationSet) -> Self {
        Self {
            board,
            records: obs
                .records()
                .map(|(&(camera, capture), corners)| CornerRecord {
                    camera,
                    capture,
                    corners: corners.clone(),
                })
                .collect(),
        }
    }

    pub fn observations(&self) -> Result<ObservationSet> {
        let mut obs = ObservationSet::new();
        for r in &self.records {
            if obs.get(r.camera, r.capture).is_some() {
                return Err(Error::InvalidArgument(format!("camera {} capture {} listed twice", r.camera, r.capture)));
            }
            obs.insert(r.camera, r.capture, r.corners.clone())?;
        }
        obs.validate_against(&self.board)?;
        Ok(obs)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        file.board.validate().map_err(|e| e.context(path.display().to_string()))?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Initial intrinsics for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsFile {
    pub cameras: Vec<IntrinsicsRecord>,
}

impl IntrinsicsFile {
    pub fn read(path: &Path) -> Result<Vec<FisheyeIntrinsics>> {
        let file: Self = read_json(path)?;
        file.cameras
            .iter()
            .enumerate()
            .map(|(i, c)| FisheyeIntrinsics::from_record(c).map_err(|e| e.context(format!("{}: camera {i}", path.display()))))
            .collect()
    }

    pub fn write(path: &Path, intrinsics: &[FisheyeIntrinsics]) -> Result<()> {
        write_json(
            path,
            &Self {
                cameras: intrinsics.iter().map(FisheyeIntrinsics::to_record).collect(),
            },
        )
    }
}

/// JSON sidecar carrying the sphere grid of an OCSV file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub grid: SphereGrid,
}

/// Sidecar path of an OCSV file (`depth.ocsv` → `depth.json`).
pub fn grid_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_grid_sidecar(path: &Path, grid: &SphereGrid) -> Result<()> {
    write_json(&grid_sidecar_path(path), &GridSidecar { grid: *grid })
}

/// Reads and validates the grid sidecar of an OCSV file.
pub fn read_grid_sidecar(path: &Path) -> Result<SphereGrid> {
    let sidecar_path = grid_sidecar_path(path);
    let sidecar: GridSidecar = read_json(&sidecar_path)?;
    sidecar.grid.validate().map_err(|e| e.context(sidecar_path.display().to_string()))?;
    Ok(sidecar.grid)
}

/// Writes a cost volume as OCSV plus its grid sidecar.
pub fn write_cost_volume(path: &Path, vol: &CostVolume) -> Result<()> {
    write_ocsv(path, &vol.to_ocsv())?;
    write_grid_sidecar(path, &vol.grid)
}

pub fn read_cost_volume(path: &Path) -> Result<CostVolume> {
    let vol = read_ocsv(path)?;
    let grid = read_grid_sidecar(path)?;
    CostVolume::from_ocsv(vol, grid).map_err(|e| e.context(path.display().to_string()))
}

/// Writes the sphere indices as an N = 1 OCSV map plus the grid sidecar.
pub fn write_depth(path: &Path, map: &InverseDepthMap) -> Result<()> {
    let vol = OcsvVolume {
        width: map.grid.width,
        height: map.grid.height,
        depth: 1,
        data: map.index.iter().map(|&n| n as f32).collect(),
        mask: map.mask.clone(),
    };
    write_ocsv(path, &vol)?;
    write_grid_sidecar(path, &map.grid)
}

pub fn read_depth(path: &Path) -> Result<InverseDepthMap> {
    let vol = read_ocsv(path)?;
    let g = read_grid_sidecar(path)?;
    if (vol.width, vol.height, vol.depth) != (g.width, g.height, 1) {
        return Err(Error::DimensionMismatch(format!(
            "{}: depth map is {}x{}x{}, sidecar grid is {}x{}",
            path.display(),
            vol.width,
            vol.height,
            vol.depth,
            g.width,
            g.height
        )));
    }
    let mut index = Vec::with_capacity(vol.data.len());
    for (&v, &m) in vol.data.iter().zip(&vol.mask) {
        if m && !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < g.num_spheres) {
            return Err(Error::format(path, format!("invalid sphere index {v}")));
        }
        index.push(if m { v as u32 } else { 0 });
    }
    InverseDepthMap::new(g, index, vol.mask).map_err(|e| e.context(path.display().to_string()))
}

/// Point with intensity, rig frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyPoint {
    pub position: [f64; 3],
    pub intensity: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

pub fn write_ply(path: &Path, points: &[PlyPoint], format: PlyFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty float intensity\nend_header\n",
        points.len()
    )
    .map_err(io)?;
    for p in points {
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {} {}", p.position[0], p.position[1], p.position[2], p.intensity).map_err(io)?,
            PlyFormat::BinaryLittleEndian => {
                for c in p.position {
                    w.write_all(&c.to_le_bytes()).map_err(io)?;
                }
                w.write_all(&p.intensity.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads PLY files in the layout written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<PlyPoint>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut line = String::new();
    let mut header = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(Error::format(path, "missing end_header"));
        }
        let l = line.trim_end().to_string();
        if l == "end_header" {
            break;
        }
        header.push(l);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::format(path, "not a PLY file"));
    }
    let format = match header.get(1).map(String::as_str) {
        Some("format ascii 1.0") => PlyFormat::Ascii,
        Some("format binary_little_endian 1.0") => PlyFormat::BinaryLittleEndian,
        other => return Err(Error::format(path, format!("unsupported PLY format line {other:?}"))),
    };
    let count: usize = header
        .iter()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::format(path, "missing vertex count"))?;
    let props: Vec<&str> = header.iter().filter_map(|l| l.strip_prefix("property ")).collect();
    if props != ["double x", "double y", "double z", "float intensity"] {
        return Err(Error::format(path, format!("unexpected vertex properties {props:?}")));
    }
    let mut points = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            for k in 0..count {
                line.clear();
                r.read_line(&mut line).map_err(io)?;
                let f: Vec<&str> = line.split_whitespace().collect();
                let bad = || Error::format(path, format!("malformed vertex {k}"));
                if f.len() != 4 {
                    return Err(bad());
                }
                let c = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                points.push(PlyPoint {
                    position: [c(0)?, c(1)?, c(2)?],
                    intensity: f[3].parse().map_err(|_| bad())?,
                });
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut rest = Vec::new();
            r.read_to_end(&mut rest).map_err(io)?;
            let expected = 28 * count;
            if rest.len() != expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected: expected as u64,
                    actual: rest.len() as u64,
                });
            }
            for chunk in rest.chunks_exact(28) {
                let c = |i: usize| f64::from_le_bytes(chunk[8 * i..8 * i + 8].try_into().unwrap());
                points.push(PlyPoint {
                    position: [c(0), c(1), c(2)],
                    intensity: f32::from_le_bytes(chunk[24..28].try_into().unwrap()),
                });
            }
        }
    }
    Ok(points)
}
