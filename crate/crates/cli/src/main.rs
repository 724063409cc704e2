//! `pancal` command-line front end.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pancal::Error;

/// Metric calibration of stationary cameras from geo-tagged panoramas.
#[derive(Debug, Parser)]
#[command(name = "pancal", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice (scene generation and RANSAC).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "PANCAL_THREADS")]
    pub threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Directory holding the dataset; default input and output paths live here.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

impl GlobalArgs {
    /// `given`, or `<out-dir>/<default>`.
    pub fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    pub fn manifest(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Reconstruct the scene from panoramas and matches.
    Reconstruct(ReconstructArgs),
    /// Scale and orient the reconstruction with panorama GPS tags.
    Georegister(GeoregisterArgs),
    /// Fit the road plane to the metric reconstruction.
    FitPlane(FitPlaneArgs),
    /// Calibrate and localize the query camera.
    Localize(LocalizeArgs),
    /// Measure ground distances between marked pixels.
    Measure(MeasureArgs),
    /// Vehicle speeds through a trap line.
    Speed(SpeedArgs),
    /// Ground activity heatmap from vehicle tracks.
    Heatmap(HeatmapArgs),
    /// Score a calibration against the synthetic truth sidecar.
    Eval(EvalArgs),
    /// Re-run the synthetic pipeline over panorama counts with and without the panoramic constraint.
    SweepPanos(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec JSON; flags below override its fields and --seed always sets the scene seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Panorama count N [default: 10].
    #[arg(long)]
    pub panos: Option<usize>,
    /// Placement radius in meters [default: 40].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Scene points [default: 2000].
    #[arg(long)]
    pub points: Option<usize>,
    /// Perspective views per panorama T [default: 12].
    #[arg(long)]
    pub views_per_pano: Option<usize>,
    /// Horizontal FOV of the perspective views in degrees [default: 90].
    #[arg(long)]
    pub fov: Option<f64>,
    /// Pixel noise sigma [default: 0].
    #[arg(long)]
    pub pixel_sigma: Option<f64>,
    /// Fraction of matches replaced by outliers [default: 0].
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// GPS noise sigma in meters [default: 0].
    #[arg(long)]
    pub gps_sigma: Option<f64>,
    /// Seed for noise draws [default: the scene seed].
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Vehicle count [default: 6].
    #[arg(long)]
    pub vehicles: Option<usize>,
    /// Ground marks [default: 12].
    #[arg(long)]
    pub marks: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PanoModeArg {
    /// Weighted penalty on the relative view poses.
    Soft,
    /// One pose per panorama; views are derived from it.
    Hard,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Panorama metadata [default: <out-dir>/panoramas.json].
    #[arg(long)]
    pub panoramas: Option<PathBuf>,
    /// Match files, repeatable [default: <out-dir>/matches.txt].
    #[arg(long)]
    pub matches: Vec<PathBuf>,
    /// Pixel mask JSON excluding dynamic objects.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Road-surface pixel labels [default: <out-dir>/road_labels.csv when present].
    #[arg(long)]
    pub road_labels: Option<PathBuf>,
    /// Perspective views per panorama [default: from the manifest, else 12].
    #[arg(long)]
    pub views_per_pano: Option<usize>,
    /// Perspective view FOV in degrees [default: from the manifest, else 90].
    #[arg(long)]
    pub fov: Option<f64>,
    /// Perspective view width [default: from the manifest, else 1920].
    #[arg(long)]
    pub view_width: Option<u32>,
    /// Perspective view height [default: from the manifest, else 1080].
    #[arg(long)]
    pub view_height: Option<u32>,
    #[arg(long, value_enum, default_value_t = PanoModeArg::Soft)]
    pub pano_mode: PanoModeArg,
    /// Weight of the panoramic constraint in soft mode.
    #[arg(long, default_value_t = 1e4)]
    pub pano_weight: f64,
    /// Adjust without the panoramic constraint.
    #[arg(long)]
    pub no_pano_constraint: bool,
    /// Hold the shared view intrinsics fixed.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub fix_intrinsics: bool,
    /// [default: <out-dir>/reconstruction.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GeoregisterArgs {
    /// [default: <out-dir>/reconstruction.json]
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
    /// [default: <out-dir>/panoramas.json]
    #[arg(long)]
    pub panoramas: Option<PathBuf>,
    /// ENU origin as `lat,lon,alt` [default: centroid of the GPS tags].
    #[arg(long)]
    pub origin: Option<String>,
    /// RANSAC inlier threshold in meters for corrupted tags; plain least squares when unset.
    #[arg(long)]
    pub ransac_threshold: Option<f64>,
    /// [default: <out-dir>/reconstruction_metric.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitPlaneArgs {
    /// [default: <out-dir>/reconstruction_metric.json]
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
    /// Inlier distance in meters.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Ignore road labels and fit the lower half of the points.
    #[arg(long)]
    pub unlabelled: bool,
    /// [default: <out-dir>/plane.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// [default: <out-dir>/reconstruction_metric.json]
    #[arg(long)]
    pub reconstruction: Option<PathBuf>,
    /// [default: <out-dir>/query_matches.txt]
    #[arg(long)]
    pub query_matches: Option<PathBuf>,
    /// Query image width [default: from the manifest, else 1920].
    #[arg(long)]
    pub width: Option<u32>,
    /// Query image height [default: from the manifest, else 1080].
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long, default_value_t = 25.0)]
    pub fov_min: f64,
    #[arg(long, default_value_t = 120.0)]
    pub fov_max: f64,
    #[arg(long, default_value_t = 5.0)]
    pub fov_step: f64,
    /// RANSAC reprojection threshold in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub ransac_threshold: f64,
    /// Keep distortion at zero.
    #[arg(long)]
    pub no_distortion: bool,
    /// Keep the principal point at the image center.
    #[arg(long)]
    pub no_principal_point: bool,
    /// Re-adjust the reconstruction jointly with the query.
    #[arg(long)]
    pub joint: bool,
    #[arg(long, default_value = "query")]
    pub camera_id: String,
    /// [default: <out-dir>/calibration.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CameraInputs {
    /// [default: <out-dir>/calibration.json]
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// [default: <out-dir>/plane.json]
    #[arg(long)]
    pub plane: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub camera: CameraInputs,
    /// [default: <out-dir>/marks.csv]
    #[arg(long)]
    pub marks: Option<PathBuf>,
    /// Report base path [default: <out-dir>/distance_report].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpeedArgs {
    #[command(flatten)]
    pub camera: CameraInputs,
    /// [default: <out-dir>/tracks.csv]
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// [default: <out-dir>/trap.json]
    #[arg(long)]
    pub trap: Option<PathBuf>,
    /// Segments averaged on each side of a crossing.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Report base path [default: <out-dir>/speed_report].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub camera: CameraInputs,
    /// [default: <out-dir>/tracks.csv]
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Cell size in meters.
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    /// Lower-left grid corner `x,y` [default: bounding box of the lifted samples].
    #[arg(long)]
    pub origin: Option<String>,
    /// Columns [default: bounding box].
    #[arg(long)]
    pub nx: Option<usize>,
    /// Rows [default: bounding box].
    #[arg(long)]
    pub ny: Option<usize>,
    /// Output base path [default: <out-dir>/heatmap].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth sidecar written by `synth` [default: <out-dir>/truth.json].
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub camera: CameraInputs,
    /// [default: <out-dir>/marks.csv when present]
    #[arg(long)]
    pub marks: Option<PathBuf>,
    /// [default: <out-dir>/tracks.csv when present]
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// [default: <out-dir>/trap.json when present]
    #[arg(long)]
    pub trap: Option<PathBuf>,
    /// Report base path [default: <out-dir>/eval_report].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 2)]
    pub min: usize,
    #[arg(long, default_value_t = 10)]
    pub max: usize,
    /// Scenes per panorama count, seeded from --seed upward.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1.0)]
    pub pixel_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    /// [default: <out-dir>/sweep.csv]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// 2 for bad input, 3 when a pipeline stage fails.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_)
        | Error::Validation(_)
        | Error::Range(_)
        | Error::Parse { .. }
        | Error::FormatVersion { .. }
        | Error::Io { .. } => 2,
        _ => 3,
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
