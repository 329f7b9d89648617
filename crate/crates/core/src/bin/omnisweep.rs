use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use omnisweep::calib::{calibrate, BundleConfig, CheckerboardSpec};
use omnisweep::cost::{build_cost_volume, cost_volume_from_spheres, load_external_cost_maps, PairCost, PairSelection, Zncc, DEFAULT_MIN_OVERLAP, DEFAULT_WINDOW};
use omnisweep::image::GrayImage;
use omnisweep::io::{
    count_osph_cameras, read_cost_volume, read_depth, read_osph_sphere, write_cost_volume, write_depth, write_osph, CornersFile, IntrinsicsFile, PlyFormat, RigFile,
};
use omnisweep::render::{export_point_cloud, render_panorama};
use omnisweep::sgm::{compute_metrics, error_map, sgm_aggregate, wta, InverseDepthMap, SgmParams};
use omnisweep::sweep::{warp_all, FisheyeView, RigFrame, SphereGrid};
use omnisweep::synth::{CalibrationScene, SyntheticRig, SyntheticScene};
use omnisweep::{Error, Result};

#[derive(Parser)]
#[command(name = "omnisweep", version, about = "Omnidirectional wide-baseline stereo from a fisheye rig")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the rig from checkerboard corner observations.
    Calibrate(CalibrateArgs),
    /// Warp every camera onto every sweep sphere (OSPH files).
    Sweep(SweepArgs),
    /// Build the fused matching-cost volume (OCSV).
    Cost(CostArgs),
    /// Aggregate a cost volume with SGM and pick the best sphere per pixel.
    Depth(DepthArgs),
    /// Compare a predicted depth map with ground truth; prints JSON metrics.
    Eval(EvalArgs),
    /// Render the intensity panorama seen through a depth map.
    Panorama(PanoramaArgs),
    /// Export a depth map as a PLY point cloud.
    Cloud(CloudArgs),
    /// Generate the synthetic rig, scene images, ground truth and corners.
    Synth(SynthArgs),
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    /// Panorama width (longitude samples).
    #[arg(long, default_value_t = 400)]
    width: usize,
    /// Panorama height (latitude samples).
    #[arg(long, default_value_t = 100)]
    height: usize,
    /// Number of sweep spheres.
    #[arg(long = "n-spheres", default_value_t = 64)]
    n_spheres: usize,
    /// Minimum sweep depth in meters.
    #[arg(long = "d-min", default_value_t = 1.0)]
    d_min: f64,
    /// Lowest latitude in degrees.
    #[arg(long = "phi-min", default_value_t = -45.0, allow_hyphen_values = true)]
    phi_min: f64,
    /// Highest latitude in degrees.
    #[arg(long = "phi-max", default_value_t = 45.0, allow_hyphen_values = true)]
    phi_max: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<SphereGrid> {
        SphereGrid::new(self.width, self.height, self.n_spheres, self.d_min, self.phi_min.to_radians(), self.phi_max.to_radians())
    }
}

#[derive(Args)]
struct RigInput {
    /// Rig calibration file.
    #[arg(long)]
    rig: PathBuf,
    /// Camera images in rig order (8/16-bit PNG or PGM).
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    /// Standardize each image over its field of view before warping.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Corner observations with the board description.
    #[arg(long)]
    corners: PathBuf,
    /// Initial per-camera intrinsics.
    #[arg(long)]
    intrinsics: PathBuf,
    /// Output rig file.
    #[arg(long)]
    out: PathBuf,
    /// Hold intrinsics fixed.
    #[arg(long)]
    fixed_intrinsics: bool,
    /// Hold the affine maps fixed while refining the polynomials.
    #[arg(long)]
    fixed_affine: bool,
    /// Huber threshold in pixels (plain squared error when absent).
    #[arg(long)]
    huber: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: RigInput,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for `cam<i>_sphere<nnnn>.osph`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CostKind {
    Zncc,
    External,
}

#[derive(Args)]
struct CostArgs {
    /// Rig file (with --images) to warp the images directly.
    #[arg(long, requires = "images", conflicts_with = "osph")]
    rig: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    images: Vec<PathBuf>,
    /// Standardize each image over its field of view before warping.
    #[arg(long)]
    normalize: bool,
    /// Directory of spherical images written by `sweep`.
    #[arg(long)]
    osph: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = CostKind::Zncc)]
    cost: CostKind,
    /// Directory of `pair_<i>_<j>.ocsv` volumes for `--cost external`.
    #[arg(long, required_if_eq("cost", "external"))]
    external: Option<PathBuf>,
    /// Camera pairs as `i-j` separated by commas; all pairs by default.
    #[arg(long, value_parser = parse_pairs)]
    pairs: Option<PairList>,
    /// Fraction of the sphere two cameras must share to form a pair there.
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    min_overlap: f64,
    /// ZNCC window side (odd).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Output cost volume; the grid goes to a `.json` sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DepthArgs {
    /// Cost volume written by `cost`.
    #[arg(long)]
    cost: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    p1: f64,
    #[arg(long, default_value_t = 12.0)]
    p2: f64,
    /// Number of aggregation paths (4 or 8); 0 disables SGM.
    #[arg(long, default_value_t = 8)]
    paths: usize,
    /// Do not wrap aggregation paths around the longitude seam.
    #[arg(long)]
    no_wrap: bool,
    /// Output depth map (sphere indices); the grid goes to a sidecar.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth depth map; prints metrics as JSON when given.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PanoramaArgs {
    #[command(flatten)]
    input: RigInput,
    #[arg(long)]
    depth: PathBuf,
    /// Output image (8-bit, invalid pixels black).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlyKind {
    Ascii,
    Binary,
}

#[derive(Args)]
struct CloudArgs {
    #[arg(long)]
    depth: PathBuf,
    /// Per-pixel intensity panorama (same size as the depth map).
    #[arg(long)]
    intensity: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlyKind::Binary)]
    format: PlyKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SceneKind {
    Courtyard,
    Sphere,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = SceneKind::Courtyard)]
    scene: SceneKind,
    /// Sphere-scene radius in meters.
    #[arg(long, default_value_t = 3.0)]
    sphere_radius: f64,
    /// Camera distance from the rig center in meters.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Nominal lens focal coefficient in pixels.
    #[arg(long, default_value_t = 150.0)]
    focal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Board captures in the calibration set.
    #[arg(long, default_value_t = 12)]
    captures: usize,
    /// Corner noise standard deviation in pixels.
    #[arg(long, default_value_t = 0.0)]
    corner_noise: f64,
    /// Relative perturbation of the written initial intrinsics.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone)]
struct PairList(Vec<(usize, usize)>);

fn parse_pairs(s: &str) -> std::result::Result<PairList, String> {
    s.split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once('-').ok_or_else(|| format!("pair `{p}` is not of the form i-j"))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("pair `{p}`: {e}"));
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<std::result::Result<_, _>>()
        .map(PairList)
}

fn load_views(rig: &RigFile, images: &[PathBuf], normalize: bool) -> Result<Vec<FisheyeView>> {
    let intrinsics = rig.intrinsics()?;
    if images.len() != intrinsics.len() {
        return Err(Error::InvalidArgument(format!("{} images for {} cameras in the rig file", images.len(), intrinsics.len())));
    }
    images
        .iter()
        .zip(intrinsics)
        .map(|(path, intr)| {
            let mut view = FisheyeView::new(GrayImage::load(path)?, intr).map_err(|e| e.context(path.display().to_string()))?;
            if normalize && view.normalize()? {
                log::warn!("{}: image is constant over its field of view", path.display());
            }
            Ok(view)
        })
        .collect()
}

fn load_rig_input(input: &RigInput) -> Result<(RigFrame, Vec<FisheyeView>)> {
    let rig = RigFile::read(&input.rig)?;
    if rig.cameras.len() < 2 {
        return Err(Error::InvalidArgument(format!("{}: the depth pipeline needs at least two cameras", input.rig.display())));
    }
    let views = load_views(&rig, &input.images, input.normalize)?;
    Ok((rig.frame()?, views))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn run_calibrate(args: &CalibrateArgs) -> Result<()> {
    let corners = CornersFile::read(&args.corners)?;
    let obs = corners.observations()?;
    let intrinsics = IntrinsicsFile::read(&args.intrinsics)?;
    let mut config = BundleConfig {
        refine_intrinsics: !args.fixed_intrinsics,
        refine_affine: !args.fixed_affine,
        huber_px: args.huber,
        ..BundleConfig::default()
    };
    config.lm.max_iters = args.max_iters;
    let calib = calibrate(&obs, &corners.board, &intrinsics, &config)?;
    if !calib.report.converged {
        log::warn!("calibration stopped at the iteration cap; writing the best state");
    }
    log::info!(
        "calibrated {} cameras in {} iterations, RMSE {:.4} px",
        calib.cameras.len(),
        calib.report.iterations,
        calib.report.rmse
    );
    let mut rig = RigFile::new(&calib.intrinsics, &calib.cameras)?;
    rig.rmse_px = Some(calib.report.per_camera_rmse.clone());
    rig.write(&args.out)?;
    emit(&to_json(&calib.report));
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    let (frame, views) = load_rig_input(&args.input)?;
    create_dir(&args.out)?;
    for n in 0..grid.num_spheres {
        for img in warp_all(&views, &frame, n, &grid)? {
            write_osph(&args.out.join(omnisweep::io::osph_name(img.camera, n)), &img)?;
        }
    }
    Ok(())
}

fn run_cost(args: &CostArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    let cameras = match (&args.rig, &args.osph) {
        (Some(rig), None) => RigFile::read(rig)?.cameras.len(),
        (None, Some(dir)) => count_osph_cameras(dir),
        _ => return Err(Error::InvalidArgument("give either --rig with --images or --osph".into())),
    };
    if cameras < 2 {
        return Err(Error::InvalidArgument(format!("need at least two cameras, found {cameras}")));
    }
    let pairs = match &args.pairs {
        Some(p) => PairSelection::new(p.0.iter().copied(), args.min_overlap)?,
        None => {
            let mut all = PairSelection::all(cameras);
            all.min_overlap = args.min_overlap;
            all
        }
    };
    if let Some(&(i, j)) = pairs.pairs().iter().find(|(_, j)| *j >= cameras) {
        return Err(Error::InvalidArgument(format!("pair {i}-{j} names a camera outside 0..{cameras}")));
    }
    let zncc;
    let external;
    let cost: &dyn PairCost = match args.cost {
        CostKind::Zncc => {
            zncc = Zncc { window: args.window };
            &zncc
        }
        CostKind::External => {
            let dir = args.external.as_deref().ok_or_else(|| Error::InvalidArgument("--cost external needs --external".into()))?;
            external = load_external_cost_maps(dir, &grid, &pairs)?;
            &external
        }
    };
    let volume = match (&args.rig, &args.osph) {
        (Some(rig), _) => {
            let input = RigInput {
                rig: rig.clone(),
                images: args.images.clone(),
                normalize: args.normalize,
            };
            let (frame, views) = load_rig_input(&input)?;
            build_cost_volume(&views, &frame, &grid, cost, &pairs)?
        }
        (None, Some(dir)) => cost_volume_from_spheres(&grid, cost, &pairs, |n| read_osph_sphere(dir, cameras, n))?,
        _ => unreachable!("checked above"),
    };
    write_cost_volume(&args.out, &volume)
}

fn run_depth(args: &DepthArgs) -> Result<()> {
    let volume = read_cost_volume(&args.cost)?;
    let aggregated = if args.paths == 0 {
        volume
    } else {
        let params = SgmParams {
            p1: args.p1,
            p2: args.p2,
            paths: args.paths,
            wrap_horizontal: !args.no_wrap,
        };
        sgm_aggregate(&volume, &params)?
    };
    let depth = wta(&aggregated);
    write_depth(&args.out, &depth)?;
    if let Some(gt) = &args.gt {
        print_metrics(&depth, &read_depth(gt)?, None)?;
    }
    Ok(())
}

fn print_metrics(pred: &InverseDepthMap, gt: &InverseDepthMap, out: Option<&Path>) -> Result<()> {
    let metrics = compute_metrics(&error_map(pred, gt)?)?;
    let json = to_json(&metrics);
    if let Some(path) = out {
        write_text(path, &json)?;
    }
    emit(&json);
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    print_metrics(&read_depth(&args.pred)?, &read_depth(&args.gt)?, args.out.as_deref())
}

fn run_panorama(args: &PanoramaArgs) -> Result<()> {
    let depth = read_depth(&args.depth)?;
    let (frame, views) = load_rig_input(&args.input)?;
    render_panorama(&depth, &views, &frame)?.to_image().save_8bit(&args.out)
}

fn run_cloud(args: &CloudArgs) -> Result<()> {
    let depth = read_depth(&args.depth)?;
    let intensity = match &args.intensity {
        Some(path) => {
            let img = GrayImage::load(path)?;
            if (img.width(), img.height()) != (depth.grid.width, depth.grid.height) {
                return Err(Error::DimensionMismatch(format!(
                    "{}: intensity image is {}x{}, depth map is {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    depth.grid.width,
                    depth.grid.height
                )));
            }
            Some(img.data().to_vec())
        }
        None => None,
    };
    let format = match args.format {
        PlyKind::Ascii => PlyFormat::Ascii,
        PlyKind::Binary => PlyFormat::BinaryLittleEndian,
    };
    let count = export_point_cloud(&args.out, &depth, intensity.as_deref(), format)?;
    log::info!("wrote {count} points to {}", args.out.display());
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    if !(args.radius > 0.0 && args.focal > 0.0) {
        return Err(Error::InvalidArgument("rig radius and focal must be positive".into()));
    }
    let rig = SyntheticRig::square(args.radius, args.focal);
    let scene = match args.scene {
        SceneKind::Courtyard => SyntheticScene::courtyard(args.seed),
        SceneKind::Sphere => SyntheticScene::sphere(args.sphere_radius, 0.25, args.seed),
    };
    create_dir(&args.out)?;
    let mut rig_file = RigFile::new(&rig.intrinsics, &rig.cameras)?;
    rig_file.rmse_px = None;
    rig_file.write(&args.out.join("rig.json"))?;
    for (i, img) in scene.render(&rig)?.iter().enumerate() {
        img.save_png16(&args.out.join(format!("cam{i}.png")))?;
    }
    let depths = scene.ground_truth_depths(&grid);
    write_depth(&args.out.join("gt_depth.ocsv"), &InverseDepthMap::from_depths(grid, &depths)?)?;
    let panorama: Vec<f32> = scene.ground_truth_panorama(&grid).iter().map(|&v| v as f32).collect();
    GrayImage::from_vec(grid.width, grid.height, panorama)?.save_png16(&args.out.join("gt_panorama.png"))?;

    let board = CheckerboardSpec::new(12, 10, 0.06)?;
    let calib = CalibrationScene::generate(&rig, board, args.captures, args.corner_noise, args.seed)?;
    CornersFile::from_observations(board, &calib.observations).write(&args.out.join("corners.json"))?;
    let initial = if args.perturb == 0.0 {
        rig.intrinsics.clone()
    } else {
        calib.perturbed_intrinsics(args.perturb)
    };
    IntrinsicsFile::write(&args.out.join("intrinsics.json"), &initial)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Cost(a) => run_cost(a),
        Command::Depth(a) => run_depth(a),
        Command::Eval(a) => run_eval(a),
        Command::Panorama(a) => run_panorama(a),
        Command::Cloud(a) => run_cloud(a),
        Command::Synth(a) => run_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
