//! Subcommand bodies. Each returns the text printed on stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use pancal::geodesy::{centroid_origin, geodetic_to_enu, georegister_with, GeodeticCoord};
use pancal::geometry::{SamplingConfig, Vec2};
use pancal::groundplane::{distance_error_stats, fit_plane_ransac, measure_ground_distance, PlaneFitOptions, PlaneModel};
use pancal::io::{self, CameraCalibration, PlaneFile, ProjectManifest, TrapDefinition};
use pancal::localize::{lift_matches, localize_query, refine_query_joint, LocalizeOptions, RefineOptions};
use pancal::optim::{BaConfig, PanoMode};
use pancal::sfm::{reconstruct, ReconstructOptions, ScaleState};
use pancal::synth::{
    constraint_ablation, evaluate, generate_scene, render_matches, NoiseSpec, Observables, PipelineOptions, SceneSpec,
};
use pancal::traffic::{activity_heatmap, lift_track, trap_speed_windowed, GroundTrack, HeatmapGrid, SpeedTrap};
use pancal::{Error, Result};
use rayon::prelude::*;

use crate::*;

pub fn run(cli: &Cli) -> Result<String> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(g, a),
        Command::Reconstruct(a) => reconstruct_cmd(g, a),
        Command::Georegister(a) => georegister(g, a),
        Command::FitPlane(a) => fit_plane(g, a),
        Command::Localize(a) => localize(g, a),
        Command::Measure(a) => measure(g, a),
        Command::Speed(a) => speed(g, a),
        Command::Heatmap(a) => heatmap(g, a),
        Command::Eval(a) => eval(g, a),
        Command::SweepPanos(a) => sweep(g, a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn parse_floats<const N: usize>(flag: &str, s: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("--{flag} {s:?}: {e}")))?;
    v.try_into()
        .map_err(|_| usage(format!("--{flag} expects {N} comma-separated numbers, got {s:?}")))
}

/// Reads the manifest in the output directory, if there is one.
fn manifest(g: &GlobalArgs) -> Result<Option<ProjectManifest>> {
    let p = g.manifest();
    if p.is_file() {
        io::read_manifest(&p).map(Some)
    } else {
        Ok(None)
    }
}

fn register(g: &GlobalArgs, stage: &str, output: &Path) -> Result<()> {
    if io::register_output(&g.manifest(), stage, output)? {
        info!("recorded {stage} output in {}", display(&g.manifest()));
    }
    Ok(())
}

/// Explicit path, else the default in the output directory when it exists.
fn optional_input(g: &GlobalArgs, given: &Option<PathBuf>, default: &str) -> Option<PathBuf> {
    given.clone().or_else(|| Some(g.out_dir.join(default)).filter(|p| p.is_file()))
}

fn synth(g: &GlobalArgs, a: &SynthArgs) -> Result<String> {
    let mut spec = match &a.spec {
        Some(p) => io::read_scene_spec(p)?,
        None => SceneSpec::default(),
    };
    spec.seed = g.seed;
    if let Some(v) = a.panos {
        spec.n_panos = v;
    }
    if let Some(v) = a.radius {
        spec.radius_m = v;
    }
    if let Some(v) = a.points {
        spec.n_points = v;
    }
    if let Some(v) = a.views_per_pano {
        spec.sampling.views_per_pano = v;
    }
    if let Some(v) = a.fov {
        spec.sampling.fov_deg = v;
    }
    if let Some(v) = a.pixel_sigma {
        spec.noise.pixel_sigma = v;
    }
    if let Some(v) = a.outlier_fraction {
        spec.noise.outlier_fraction = v;
    }
    if let Some(v) = a.gps_sigma {
        spec.noise.gps_sigma_m = v;
    }
    if a.noise_seed.is_some() {
        spec.noise.seed = a.noise_seed;
    }
    if let Some(v) = a.vehicles {
        spec.vehicles.count = v;
    }
    if let Some(v) = a.marks {
        spec.n_marks = v;
    }
    spec.validate()?;

    let bundle = generate_scene(&spec)?;
    let r = render_matches(&bundle, &spec.sampling, &spec.noise)?;
    let d = &g.out_dir;
    io::write_scene_spec(&d.join("scene_spec.json"), &spec)?;
    io::write_panoramas(&d.join("panoramas.json"), &r.panoramas)?;
    io::write_matches(&d.join("matches.txt"), &r.matches)?;
    io::write_query_matches(&d.join("query_matches.txt"), &r.query_matches)?;
    io::write_road_labels(&d.join("road_labels.csv"), &r.road_labels)?;
    io::write_marks(&d.join("marks.csv"), &r.marks)?;
    io::write_tracks(&d.join("tracks.csv"), &r.tracks)?;
    io::write_trap(
        &d.join("trap.json"),
        &TrapDefinition::Pixels {
            a: r.trap_pixels.0,
            b: r.trap_pixels.1,
            camera: "query".into(),
        },
    )?;
    io::write_truth(&d.join("truth.json"), &bundle, &r.truth)?;

    let mut m = ProjectManifest::new("panoramas.json", spec.sampling);
    m.matches = vec!["matches.txt".into()];
    m.query_matches = Some("query_matches.txt".into());
    m.road_labels = Some("road_labels.csv".into());
    m.marks = Some("marks.csv".into());
    m.tracks = Some("tracks.csv".into());
    m.trap = Some("trap.json".into());
    m.truth = Some("truth.json".into());
    m.query_size = Some([r.query_size.0, r.query_size.1]);
    io::write_manifest(&g.manifest(), &m)?;

    Ok(format!(
        "panoramas: {} (T={}, radius {} m)\npoints: {}\nview matches: {} ({} outliers)\n\
         query matches: {} ({} outliers)\nmarks: {}\ntracks: {}\nwritten to: {}\n",
        r.panoramas.len(),
        spec.sampling.views_per_pano,
        spec.radius_m,
        bundle.points.len(),
        r.truth.db_matches,
        r.truth.db_outliers,
        r.truth.query_matches,
        r.truth.query_outliers,
        r.marks.len(),
        r.tracks.len(),
        display(d),
    ))
}

fn sampling(g: &GlobalArgs, a: &ReconstructArgs) -> Result<SamplingConfig> {
    let mut s = manifest(g)?.map(|m| m.sampling).unwrap_or_default();
    if let Some(v) = a.views_per_pano {
        s.views_per_pano = v;
    }
    if let Some(v) = a.fov {
        s.fov_deg = v;
    }
    if let Some(v) = a.view_width {
        s.out_width = v;
    }
    if let Some(v) = a.view_height {
        s.out_height = v;
    }
    s.validate()?;
    Ok(s)
}

fn reconstruct_cmd(g: &GlobalArgs, a: &ReconstructArgs) -> Result<String> {
    if !(a.pano_weight > 0.0 && a.pano_weight.is_finite()) {
        return Err(usage(format!("--pano-weight must be positive, got {}", a.pano_weight)));
    }
    let panos = io::read_panoramas(&g.path(&a.panoramas, "panoramas.json"))?;
    let match_paths = if a.matches.is_empty() {
        vec![g.out_dir.join("matches.txt")]
    } else {
        a.matches.clone()
    };
    let matches = io::read_match_files(&match_paths)?;
    let cfg = sampling(g, a)?;

    let mut opts = ReconstructOptions {
        seed: g.seed,
        ..ReconstructOptions::default()
    };
    opts.ba.pano_mode = match (a.no_pano_constraint, a.pano_mode) {
        (true, _) => PanoMode::Off,
        (false, PanoModeArg::Soft) => PanoMode::Soft,
        (false, PanoModeArg::Hard) => PanoMode::Hard,
    };
    opts.ba.pano_weight = a.pano_weight;
    opts.ba.fix_intrinsics = a.fix_intrinsics;
    if let Some(p) = &a.mask {
        opts.mask = Some(io::read_mask(p)?);
    }
    if let Some(p) = optional_input(g, &a.road_labels, "road_labels.csv") {
        opts.road_labels = io::read_road_labels(&p)?;
    }

    let (recon, summary) = reconstruct(&panos, &cfg, &matches, &opts)?;
    let out = g.path(&a.output, "reconstruction.json");
    io::write_reconstruction(&out, &recon)?;
    let report = io::ReconstructionReport::new(&summary, &opts.ba);
    let stem = out.file_stem().map_or("reconstruction".into(), |s| s.to_string_lossy().into_owned());
    io::write_report(&out.with_file_name(format!("{stem}_summary")), &report, &report.text())?;
    register(g, "reconstruct", &out)?;
    Ok(report.text())
}

fn georegister(g: &GlobalArgs, a: &GeoregisterArgs) -> Result<String> {
    if let Some(t) = a.ransac_threshold {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage(format!("--ransac-threshold must be positive, got {t}")));
        }
    }
    let recon = io::read_reconstruction(&g.path(&a.reconstruction, "reconstruction.json"))?;
    let panos = io::read_panoramas(&g.path(&a.panoramas, "panoramas.json"))?;
    let tags: BTreeMap<String, GeodeticCoord> = panos.iter().map(|p| (p.pano_id.clone(), p.geodetic)).collect();
    let origin = match &a.origin {
        Some(s) => {
            let [lat, lon, alt] = parse_floats::<3>("origin", s)?;
            let o = GeodeticCoord::new(lat, lon, alt);
            o.validate()?;
            o
        }
        None => centroid_origin(tags.values())?,
    };
    let (metric, t) = georegister_with(&recon, &tags, &origin, a.ransac_threshold)?;
    let residuals: BTreeMap<String, f64> = metric
        .pano_centers()
        .into_iter()
        .filter_map(|(id, c)| tags.get(&id).map(|tag| (id, (c - geodetic_to_enu(&origin, tag)).norm())))
        .collect();

    let out = g.path(&a.output, "reconstruction_metric.json");
    io::write_reconstruction(&out, &metric)?;
    let file = io::GeoregistrationFile::new(&t, origin, residuals);
    io::write_georegistration(&out.with_file_name("georegistration.json"), &file)?;
    register(g, "georegister", &out)?;
    Ok(format!(
        "scale: {:.6}\nrms gps residual (m): {:.4}\nenu origin: {:.8}, {:.8}, {:.3}\npanoramas: {}\n",
        t.scale,
        file.rms_residual_m(),
        origin.lat_deg,
        origin.lon_deg,
        origin.alt_m,
        file.residuals_m.len(),
    ))
}

fn fit_plane(g: &GlobalArgs, a: &FitPlaneArgs) -> Result<String> {
    if !(a.threshold > 0.0 && a.threshold.is_finite()) {
        return Err(usage(format!("--threshold must be positive, got {}", a.threshold)));
    }
    let recon = io::read_reconstruction(&g.path(&a.reconstruction, "reconstruction_metric.json"))?;
    if recon.scale_state != ScaleState::Metric {
        warn!("fitting a plane in an up-to-scale frame");
    }
    let (points, labels): (Vec<_>, Vec<_>) = recon.points.values().map(|p| (p.xyz, p.road_mark)).unzip();
    let labelled = !a.unlabelled && labels.iter().any(|&l| l);
    let opts = PlaneFitOptions {
        threshold_m: a.threshold,
        seed: g.seed,
        ..PlaneFitOptions::default()
    };
    let (plane, mask) = fit_plane_ransac(&points, labelled.then_some(&labels[..]), &opts)?;
    let inliers = mask.iter().filter(|&&m| m).count();
    let candidates = if labelled { labels.iter().filter(|&&l| l).count() } else { points.len() };
    let out = g.path(&a.output, "plane.json");
    io::write_plane(&out, &PlaneFile::new(&plane, inliers, candidates, recon.enu_origin))?;
    register(g, "fit-plane", &out)?;
    let n = plane.normal;
    Ok(format!(
        "normal: {:.6} {:.6} {:.6}\noffset: {:.4}\ninliers: {inliers}/{candidates} ({})\n",
        n.x,
        n.y,
        n.z,
        plane.offset,
        if labelled { "road labels" } else { "lower half" },
    ))
}

fn localize(g: &GlobalArgs, a: &LocalizeArgs) -> Result<String> {
    if !(a.fov_min > 0.0 && a.fov_min <= a.fov_max && a.fov_max < 180.0 && a.fov_step > 0.0) {
        return Err(usage("FOV grid needs 0 < --fov-min <= --fov-max < 180 and --fov-step > 0"));
    }
    if !(a.ransac_threshold > 0.0) {
        return Err(usage("--ransac-threshold must be positive"));
    }
    let recon = io::read_reconstruction(&g.path(&a.reconstruction, "reconstruction_metric.json"))?;
    let raw = io::read_query_matches(&g.path(&a.query_matches, "query_matches.txt"))?;
    let [mw, mh] = manifest(g)?.and_then(|m| m.query_size).unwrap_or([1920, 1080]);
    let size = (a.width.unwrap_or(mw), a.height.unwrap_or(mh));

    let opts = LocalizeOptions {
        fov_grid_deg: (a.fov_min, a.fov_max, a.fov_step),
        ransac_threshold_px: a.ransac_threshold,
        seed: g.seed,
        refine: RefineOptions {
            estimate_distortion: !a.no_distortion,
            estimate_pp: !a.no_principal_point,
            ..RefineOptions::default()
        },
        ..LocalizeOptions::default()
    };
    let matches = lift_matches(&recon, &raw)?;
    let mut result = localize_query(&matches, size, &opts)?;
    if a.joint {
        result = refine_query_joint(&recon, &result, &matches, opts.ransac_threshold_px, &opts.refine, &BaConfig::default())?.0;
    }
    let cal = CameraCalibration::from_result(&a.camera_id, &result, recon.enu_origin);
    let out = g.path(&a.output, "calibration.json");
    io::write_calibration(&out, &cal)?;
    register(g, "localize", &out)?;

    let k = &cal.intrinsics;
    let c = cal.pose.center;
    Ok(format!(
        "camera: {}\nfocal (px): {:.3} {:.3}\nprincipal point (px): {:.3} {:.3}\n\
         distortion: k1 {:.6} k2 {:.6} p1 {:.6} p2 {:.6}\ngrid fov (deg): {}\n\
         inliers: {}/{}\nrms (px): {:.4}\ncenter: {:.3} {:.3} {:.3}\nframe: {}\n",
        cal.camera_id,
        k.fx,
        k.fy,
        k.px,
        k.py,
        k.k1,
        k.k2,
        k.p1,
        k.p2,
        cal.selected_fov_deg,
        cal.num_inliers,
        matches.resolved.len(),
        cal.rms_px,
        c.x,
        c.y,
        c.z,
        if cal.enu_origin.is_some() { "metric" } else { "up to scale" },
    ))
}

/// Calibration and plane, checked to share a metric frame.
fn load_camera(g: &GlobalArgs, c: &CameraInputs) -> Result<(CameraCalibration, PlaneModel)> {
    let cal = io::read_calibration(&g.path(&c.calibration, "calibration.json"))?;
    let plane_path = g.path(&c.plane, "plane.json");
    let pf = io::read_plane(&plane_path)?;
    let origin = cal.require_metric()?;
    if pf.enu_origin.as_ref() != Some(origin) {
        return Err(Error::Validation(format!(
            "plane {} is not in the frame of calibration {}",
            display(&plane_path),
            cal.camera_id
        )));
    }
    Ok((cal, pf.plane()?))
}

fn measure(g: &GlobalArgs, a: &MeasureArgs) -> Result<String> {
    let (cal, plane) = load_camera(g, &a.camera)?;
    let marks = io::read_marks(&g.path(&a.marks, "marks.csv"))?;
    let mut measurements = Vec::with_capacity(marks.len());
    let (mut est, mut gt) = (Vec::new(), Vec::new());
    for (index, m) in marks.iter().enumerate() {
        let r = measure_ground_distance(&cal.intrinsics, &cal.pose, &plane, &m.pixel_a, &m.pixel_b);
        let (estimated_m, failure) = match r {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let (Some(e), Some(t)) = (estimated_m, m.gt_distance_m) {
            est.push(e);
            gt.push(t);
        }
        measurements.push(io::MarkMeasurement {
            index,
            pixel_a: m.pixel_a,
            pixel_b: m.pixel_b,
            estimated_m,
            gt_distance_m: m.gt_distance_m,
            error_pct: estimated_m.zip(m.gt_distance_m).map(|(e, t)| 100.0 * (e - t).abs() / t),
            failure,
        });
    }
    let stats = if est.is_empty() { None } else { Some(distance_error_stats(&est, &gt)?) };
    let measured = measurements.iter().filter(|m| m.estimated_m.is_some()).count();
    let report = io::DistanceReport {
        format_version: io::FORMAT_VERSION,
        camera_id: cal.camera_id.clone(),
        measurements,
        stats,
    };
    io::write_report(&g.path(&a.output, "distance_report"), &report, &report.table())?;

    let mut s = format!("marks measured: {measured}/{}\n", marks.len());
    match &report.stats {
        Some(st) => s.push_str(&io::distance_table(&[(cal.camera_id.clone(), st)])),
        None => s.push_str("no ground-truth distances to compare\n"),
    }
    Ok(s)
}

fn trap_of(cal: &CameraCalibration, plane: &PlaneModel, def: &TrapDefinition) -> Result<SpeedTrap> {
    match def {
        TrapDefinition::Enu { a, b } => SpeedTrap::new(*a, *b, plane),
        TrapDefinition::Pixels { a, b, camera } => {
            if *camera != cal.camera_id {
                warn!("trap was drawn in camera {camera}, using calibration {}", cal.camera_id);
            }
            SpeedTrap::from_pixels(&cal.intrinsics, &cal.pose, plane, a, b)
        }
    }
}

/// Lifts every track; unusable ones are reported by id.
fn lift_all(
    cal: &CameraCalibration,
    plane: &PlaneModel,
    path: &Path,
) -> Result<(Vec<GroundTrack>, usize, Vec<String>)> {
    let tracks = io::read_tracks(path)?;
    let lifted: Vec<_> = tracks
        .par_iter()
        .map(|t| lift_track(&cal.intrinsics, &cal.pose, plane, t))
        .collect();
    let (mut ground, mut dropped, mut unusable) = (Vec::new(), 0, Vec::new());
    for (t, r) in tracks.iter().zip(lifted) {
        match r {
            Ok((gt, d)) => {
                dropped += d.len();
                ground.push(gt);
            }
            Err(Error::TrackUnusable(msg)) => {
                warn!("{msg}");
                unusable.push(t.track_id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((ground, dropped, unusable))
}

fn speed(g: &GlobalArgs, a: &SpeedArgs) -> Result<String> {
    if a.window == 0 {
        return Err(usage("--window must be at least 1"));
    }
    let (cal, plane) = load_camera(g, &a.camera)?;
    let def = io::read_trap(&g.path(&a.trap, "trap.json"))?;
    let trap = trap_of(&cal, &plane, &def)?;
    let (ground, dropped, unusable) = lift_all(&cal, &plane, &g.path(&a.tracks, "tracks.csv"))?;
    let crossings: Vec<io::SpeedRecord> = ground
        .iter()
        .flat_map(|t| {
            trap_speed_windowed(t, &trap, a.window).into_iter().map(|c| io::SpeedRecord {
                track_id: t.track_id.clone(),
                crossing_time_s: c.time_s,
                speed_mps: c.speed_mps,
                speed_kmh: c.speed_mps * 3.6,
                segment: c.segment,
            })
        })
        .collect();
    let report = io::SpeedReport {
        format_version: io::FORMAT_VERSION,
        camera_id: cal.camera_id.clone(),
        trap: def,
        window: a.window,
        crossings,
        dropped_samples: dropped,
        unusable_tracks: unusable,
    };
    io::write_report(&g.path(&a.output, "speed_report"), &report, &report.table())?;

    let mut s = String::new();
    for c in &report.crossings {
        let _ = writeln!(
            s,
            "{}: {:.1} m/s ({:.1} km/h) at t={:.3} s",
            c.track_id, c.speed_mps, c.speed_kmh, c.crossing_time_s
        );
    }
    let _ = writeln!(
        s,
        "crossings: {}\ntracks: {} lifted, {} unusable\ndropped samples: {}",
        report.crossings.len(),
        ground.len(),
        report.unusable_tracks.len(),
        dropped
    );
    Ok(s)
}

fn heatmap(g: &GlobalArgs, a: &HeatmapArgs) -> Result<String> {
    if !(a.cell_size > 0.0 && a.cell_size.is_finite()) {
        return Err(usage(format!("--cell-size must be positive, got {}", a.cell_size)));
    }
    let (cal, plane) = load_camera(g, &a.camera)?;
    let (ground, _, unusable) = lift_all(&cal, &plane, &g.path(&a.tracks, "tracks.csv"))?;
    let pts: Vec<_> = ground.iter().flat_map(|t| t.samples.iter().map(|s| s.1)).collect();
    let (lo, hi) = pts.iter().fold(
        (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
    );
    let cs = a.cell_size;
    let origin = match &a.origin {
        Some(s) => Vec2::from(parse_floats::<2>("origin", s)?),
        None if pts.is_empty() => Vec2::zeros(),
        None => Vec2::new((lo.x / cs).floor() * cs, (lo.y / cs).floor() * cs),
    };
    let span = |h: f64, o: f64| if pts.is_empty() { 1 } else { (((h - o) / cs).floor() as i64 + 1).max(1) as usize };
    let grid = HeatmapGrid {
        origin,
        cell_size: cs,
        nx: a.nx.unwrap_or_else(|| span(hi.x, origin.x)),
        ny: a.ny.unwrap_or_else(|| span(hi.y, origin.y)),
    };
    let h = activity_heatmap(&ground, &grid)?;
    let base = g.path(&a.output, "heatmap");
    io::write_heatmap(&base, &h)?;
    let max = h.counts.iter().flatten().copied().max().unwrap_or(0);
    Ok(format!(
        "grid: {} x {} cells of {} m from ({:.2}, {:.2})\nsamples: {} ({} outside)\nbusiest cell: {max}\nunusable tracks: {}\n",
        grid.nx,
        grid.ny,
        cs,
        origin.x,
        origin.y,
        pts.len(),
        h.spillover,
        unusable.len(),
    ))
}

fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<String> {
    let truth = io::read_truth(&g.path(&a.truth, "truth.json"))?;
    let cal = io::read_calibration(&g.path(&a.camera.calibration, "calibration.json"))?;
    let plane = match optional_input(g, &a.camera.plane, "plane.json") {
        Some(p) => Some(io::read_plane(&p)?.plane()?),
        None => None,
    };
    let marks = match optional_input(g, &a.marks, "marks.csv") {
        Some(p) => io::read_marks(&p)?,
        None => Vec::new(),
    };
    let tracks = match optional_input(g, &a.tracks, "tracks.csv") {
        Some(p) => io::read_tracks(&p)?,
        None => Vec::new(),
    };
    let trap_pixels = match optional_input(g, &a.trap, "trap.json") {
        Some(p) => match io::read_trap(&p)? {
            TrapDefinition::Pixels { a, b, .. } => Some((a, b)),
            TrapDefinition::Enu { .. } => {
                warn!("ENU trap is not scored; draw it in pixels to evaluate speeds");
                None
            }
        },
        None => None,
    };
    let observed = Observables {
        marks: &marks,
        tracks: &tracks,
        trap_pixels,
    };
    let report = evaluate(&truth.bundle, observed, &cal.intrinsics, &cal.pose, plane.as_ref(), cal.enu_origin.as_ref())?;
    let table = report.table(&cal.camera_id);
    io::write_report(&g.path(&a.output, "eval_report"), &report, &table)?;
    Ok(table)
}

fn sweep(g: &GlobalArgs, a: &SweepArgs) -> Result<String> {
    if a.min < 2 || a.min > a.max {
        return Err(usage(format!("sweep needs 2 <= --min <= --max, got {}..{}", a.min, a.max)));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let noise = NoiseSpec {
        pixel_sigma: a.pixel_sigma,
        outlier_fraction: a.outlier_fraction,
        ..NoiseSpec::default()
    };
    noise.validate()?;
    let jobs: Vec<(usize, u64)> = (a.min..=a.max)
        .flat_map(|n| (0..a.seeds as u64).map(move |k| (n, g.seed + k)))
        .collect();
    let trials: Vec<_> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let spec = SceneSpec {
                seed,
                n_panos: n,
                n_points: a.points,
                noise: noise.clone(),
                ..SceneSpec::default()
            };
            let run = || -> Result<_> {
                let bundle = generate_scene(&spec)?;
                let rendered = render_matches(&bundle, &spec.sampling, &spec.noise)?;
                let mut opts = PipelineOptions::default();
                opts.reconstruct.seed = seed;
                opts.localize.seed = seed;
                opts.plane.seed = seed;
                let (on, off) = constraint_ablation(&bundle, &rendered, &opts);
                let score = |r: Result<pancal::synth::PipelineOutput>, tag: &str| match r {
                    Ok(o) => io::TrialScore::from_report(&o.report),
                    Err(e) => {
                        info!("N={n} seed={seed} {tag}: {e}");
                        None
                    }
                };
                Ok((score(on, "with"), score(off, "without")))
            };
            run().unwrap_or_else(|e| {
                warn!("N={n} seed={seed}: scene generation failed: {e}");
                (None, None)
            })
        })
        .collect();
    let rows: Vec<io::SweepRow> = (a.min..=a.max)
        .map(|n| {
            let (with, without): (Vec<_>, Vec<_>) = jobs
                .iter()
                .zip(&trials)
                .filter(|((m, _), _)| *m == n)
                .map(|(_, t)| *t)
                .unzip();
            io::SweepRow::from_trials(n, &with, &without)
        })
        .collect();
    let out = g.path(&a.output, "sweep.csv");
    io::write_sweep_csv(&out, &rows)?;
    Ok(io::sweep_table(&rows))
}
