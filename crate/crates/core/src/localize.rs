//! Calibration and localization of an uncalibrated query camera against a reconstruction.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{project, CameraIntrinsics, Rotation, Vec2, Vec3, ViewPose, INTRINSIC_NAMES};
use crate::optim::{
    apply_params, build_ba_problem, solve_lm, BaConfig, IntrinsicsParam, LmOptions, PanoMode, PoseParam, Problem,
    ResidualKind, RobustLoss,
};
use crate::ransac::RansacOptions;
use crate::sfm::{register_view_p3p, PnpOptions, Reconstruction};
use crate::{Error, Result};

/// Snap radius for lifting database pixels onto track observations.
pub const SNAP_RADIUS_PX: f64 = 2.0;

/// One query-to-database 2D-2D correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct RawQueryMatch {
    pub query_pixel: Vec2,
    pub db_view: String,
    pub db_pixel: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedMatch {
    pub query_pixel: Vec2,
    pub point_id: u64,
    pub xyz: Vec3,
    /// Database views that agreed on this point.
    pub votes: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct QueryMatches {
    pub resolved: Vec<ResolvedMatch>,
    pub raw_count: usize,
    pub dropped: usize,
}

impl QueryMatches {
    pub fn points(&self) -> Vec<Vec3> {
        self.resolved.iter().map(|m| m.xyz).collect()
    }

    pub fn pixels(&self) -> Vec<Vec2> {
        self.resolved.iter().map(|m| m.query_pixel).collect()
    }
}

type CellKey = (usize, i64, i64);

fn cell_of(view: usize, px: &Vec2) -> CellKey {
    (
        view,
        (px.x / SNAP_RADIUS_PX).floor() as i64,
        (px.y / SNAP_RADIUS_PX).floor() as i64,
    )
}

/// Resolves database pixels to triangulated points and merges per query pixel by vote.
pub fn lift_matches(recon: &Reconstruction, raw: &[RawQueryMatch]) -> Result<QueryMatches> {
    let mut grid: HashMap<CellKey, Vec<(Vec2, u64)>> = HashMap::new();
    for (&id, p) in &recon.points {
        for o in &p.observations {
            grid.entry(cell_of(o.view, &o.pixel)).or_default().push((o.pixel, id));
        }
    }
    let lookup = recon.view_lookup();
    let mut votes: BTreeMap<(u64, u64), (Vec2, BTreeMap<u64, usize>)> = BTreeMap::new();
    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut dropped = 0;
    for m in raw {
        let hit = lookup
            .get(m.db_view.as_str())
            .filter(|&&v| recon.views[v].registered)
            .and_then(|&v| {
                let (_, cx, cy) = cell_of(v, &m.db_pixel);
                let mut best: Option<(f64, u64)> = None;
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for (px, id) in grid.get(&(v, cx + dx, cy + dy)).into_iter().flatten() {
                            let d = (px - m.db_pixel).norm();
                            if d <= SNAP_RADIUS_PX && best.is_none_or(|(bd, bid)| d < bd || (d == bd && *id < bid)) {
                                best = Some((d, *id));
                            }
                        }
                    }
                }
                best.map(|b| b.1)
            });
        let Some(id) = hit else {
            dropped += 1;
            continue;
        };
        let key = (m.query_pixel.x.to_bits(), m.query_pixel.y.to_bits());
        let entry = votes.entry(key).or_insert_with(|| {
            order.push(key);
            (m.query_pixel, BTreeMap::new())
        });
        *entry.1.entry(id).or_default() += 1;
    }
    let resolved: Vec<ResolvedMatch> = order
        .iter()
        .map(|k| {
            let (px, v) = &votes[k];
            let (&id, &n) = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("at least one vote");
            ResolvedMatch {
                query_pixel: *px,
                point_id: id,
                xyz: recon.points[&id].xyz,
                votes: n,
            }
        })
        .collect();
    if resolved.is_empty() {
        return Err(Error::LocalizationFailed(format!(
            "none of {} query matches lifted to a triangulated point",
            raw.len()
        )));
    }
    Ok(QueryMatches {
        resolved,
        raw_count: raw.len(),
        dropped,
    })
}

/// Database views ranked by the number of query matches, most first.
pub fn rank_db_views(raw: &[RawQueryMatch]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in raw {
        *counts.entry(m.db_view.as_str()).or_default() += 1;
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub estimate_distortion: bool,
    pub estimate_pp: bool,
    pub huber_delta: f64,
    pub lm: LmOptions,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            estimate_distortion: true,
            estimate_pp: true,
            huber_delta: 2.0,
            lm: LmOptions {
                max_iter: 200,
                ..LmOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeOptions {
    /// Horizontal FOV grid `(first, last, step)` in degrees.
    pub fov_grid_deg: (f64, f64, f64),
    pub ransac_threshold_px: f64,
    pub confidence: f64,
    pub max_iter: usize,
    pub min_inliers: usize,
    /// The focal search runs on an evenly strided subset of at most this many matches.
    pub max_search_matches: usize,
    pub seed: u64,
    pub refine: RefineOptions,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            fov_grid_deg: (25.0, 120.0, 5.0),
            ransac_threshold_px: 3.0,
            confidence: 0.9999,
            max_iter: 2_000,
            min_inliers: 12,
            max_search_matches: 2000,
            seed: 0,
            refine: RefineOptions::default(),
        }
    }
}

impl LocalizeOptions {
    pub fn fov_grid(&self) -> Vec<f64> {
        let (a, b, s) = self.fov_grid_deg;
        let n = ((b - a) / s + 1e-9).floor() as usize;
        (0..=n).map(|i| a + s * i as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalCandidate {
    pub fov_deg: f64,
    pub focal_px: f64,
    pub inliers: usize,
    pub rms_px: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub inliers_before: usize,
    pub inliers_after: usize,
    /// Set when the refined estimate fit worse and the initial one was kept.
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub intrinsics: CameraIntrinsics,
    pub pose: ViewPose,
    /// Mask over the resolved matches.
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub rms_px: f64,
    pub selected_fov_deg: f64,
    pub trace: Vec<FocalCandidate>,
    pub refinement: Option<RefineReport>,
}

fn reproj(intr: &CameraIntrinsics, pose: &ViewPose, x: &Vec3, px: &Vec2) -> f64 {
    project(intr, pose, x).map_or(f64::INFINITY, |p| (p - px).norm())
}

fn inlier_rms(intr: &CameraIntrinsics, pose: &ViewPose, m: &QueryMatches, mask: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (r, _) in m.resolved.iter().zip(mask).filter(|(_, &k)| k) {
        s += reproj(intr, pose, &r.xyz, &r.query_pixel).powi(2);
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        (s / n as f64).sqrt()
    }
}

fn inlier_mask(intr: &CameraIntrinsics, pose: &ViewPose, m: &QueryMatches, threshold: f64) -> Vec<bool> {
    m.resolved
        .iter()
        .map(|r| reproj(intr, pose, &r.xyz, &r.query_pixel) < threshold)
        .collect()
}

/// FOV-grid P3P search followed by [`refine_query`].
pub fn localize_query(matches: &QueryMatches, image_size: (u32, u32), opts: &LocalizeOptions) -> Result<LocalizationResult> {
    let n = matches.resolved.len();
    if n < opts.min_inliers {
        return Err(Error::LocalizationFailed(format!(
            "{n} resolved correspondences, need >= {}",
            opts.min_inliers
        )));
    }
    let (w, h) = image_size;
    let m = n.min(opts.max_search_matches.max(opts.min_inliers));
    let subset: Vec<usize> = (0..m).map(|i| i * n / m).collect();
    let all_points = matches.points();
    let all_pixels = matches.pixels();
    let points: Vec<Vec3> = subset.iter().map(|&i| all_points[i]).collect();
    let pixels: Vec<Vec2> = subset.iter().map(|&i| all_pixels[i]).collect();
    let grid = opts.fov_grid();
    let runs: Vec<Option<(FocalCandidate, ViewPose, Vec<bool>)>> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &fov)| {
            let intr = CameraIntrinsics::from_fov(fov, w, h);
            let pnp = PnpOptions {
                threshold_px: opts.ransac_threshold_px,
                ransac: RansacOptions {
                    confidence: opts.confidence,
                    max_iter: opts.max_iter,
                    seed: opts.seed.wrapping_mul(1_000_033).wrapping_add(k as u64),
                    ..RansacOptions::default()
                },
            };
            let (pose, _) = register_view_p3p(&points, &pixels, &intr, &pnp).ok()?;
            let mask: Vec<bool> = matches
                .resolved
                .iter()
                .map(|r| reproj(&intr, &pose, &r.xyz, &r.query_pixel) < opts.ransac_threshold_px)
                .collect();
            let cand = FocalCandidate {
                fov_deg: fov,
                focal_px: intr.fx,
                inliers: mask.iter().filter(|&&b| b).count(),
                rms_px: inlier_rms(&intr, &pose, matches, &mask),
            };
            Some((cand, pose, mask))
        })
        .collect();
    let trace: Vec<FocalCandidate> = runs.iter().flatten().map(|r| r.0).collect();
    let best = runs
        .into_iter()
        .flatten()
        .reduce(|a, b| {
            if b.0.inliers > a.0.inliers || (b.0.inliers == a.0.inliers && b.0.rms_px < a.0.rms_px) {
                b
            } else {
                a
            }
        });
    let Some((cand, pose, mask)) = best.filter(|b| b.0.inliers >= opts.min_inliers) else {
        let summary: Vec<String> = trace.iter().map(|c| format!("{:.0}deg:{}", c.fov_deg, c.inliers)).collect();
        return Err(Error::LocalizationFailed(format!(
            "best focal candidate below {} inliers; search trace [{}]",
            opts.min_inliers,
            summary.join(", ")
        )));
    };
    log::info!(
        "focal search: fov {:.1} deg ({:.1} px), {} inliers, rms {:.3} px (principal point fixed at center)",
        cand.fov_deg,
        cand.focal_px,
        cand.inliers,
        cand.rms_px
    );
    let initial = LocalizationResult {
        intrinsics: CameraIntrinsics::from_fov(cand.fov_deg, w, h),
        pose,
        num_inliers: cand.inliers,
        inliers: mask,
        rms_px: cand.rms_px,
        selected_fov_deg: cand.fov_deg,
        trace,
        refinement: None,
    };
    refine_query(&initial, matches, opts.ransac_threshold_px, &opts.refine)
}

fn intrinsics_free(opts: &RefineOptions) -> [bool; 8] {
    [
        true,
        true,
        opts.estimate_pp,
        opts.estimate_pp,
        opts.estimate_distortion,
        opts.estimate_distortion,
        opts.estimate_distortion,
        opts.estimate_distortion,
    ]
}

fn solve_fixed_points(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    matches: &QueryMatches,
    mask: &[bool],
    opts: &RefineOptions,
) -> Result<(CameraIntrinsics, ViewPose, f64, f64, usize)> {
    let mut problem = Problem::default();
    let pb = problem.add_pose(PoseParam::new(pose.rotation, pose.center).with_label("query"));
    let v = problem.add_view(pb, Rotation::identity());
    let ii = problem.add_intrinsics(IntrinsicsParam {
        intrinsics: *intr,
        free: intrinsics_free(opts),
    });
    for (r, _) in matches.resolved.iter().zip(mask).filter(|(_, &k)| k) {
        let p = problem.add_point(r.xyz, false);
        problem.add_residual(
            ResidualKind::Reprojection {
                view: v,
                point: p,
                intrinsics: ii,
                observed: r.query_pixel,
            },
            1.0,
            RobustLoss::Huber(opts.huber_delta),
        );
    }
    let (params, report) = solve_lm(&problem, &opts.lm)?;
    let (rot, c) = params.poses[0];
    Ok((
        params.intrinsics[0],
        ViewPose::new(rot, c),
        report.initial_cost,
        report.final_cost,
        report.iterations,
    ))
}

/// Refines pose and intrinsics on inlier reprojections with the 3D points held fixed.
///
/// Inliers are re-evaluated at `threshold_px` after the first solve, and the solve is repeated once.
pub fn refine_query(
    initial: &LocalizationResult,
    matches: &QueryMatches,
    threshold_px: f64,
    opts: &RefineOptions,
) -> Result<LocalizationResult> {
    refine_with(initial, matches, threshold_px, opts, solve_fixed_points)
}

fn refine_with<F>(
    initial: &LocalizationResult,
    matches: &QueryMatches,
    threshold_px: f64,
    opts: &RefineOptions,
    mut solve: F,
) -> Result<LocalizationResult>
where
    F: FnMut(&CameraIntrinsics, &ViewPose, &QueryMatches, &[bool], &RefineOptions) -> Result<(CameraIntrinsics, ViewPose, f64, f64, usize)>,
{
    if initial.num_inliers < 4 {
        return Err(Error::validation("refinement needs an initial estimate with inliers"));
    }
    let (i1, p1, c0, _, it1) = solve(&initial.intrinsics, &initial.pose, matches, &initial.inliers, opts)?;
    let mask = inlier_mask(&i1, &p1, matches, threshold_px);
    let count = mask.iter().filter(|&&b| b).count();
    let (intr, pose, cost, iters, mask) = if count >= 4 {
        let (i2, p2, _, c2, it2) = solve(&i1, &p1, matches, &mask, opts)?;
        let mask2 = inlier_mask(&i2, &p2, matches, threshold_px);
        (i2, p2, c2, it1 + it2, mask2)
    } else {
        (i1, p1, f64::NAN, it1, initial.inliers.clone())
    };
    let before = inlier_rms(&initial.intrinsics, &initial.pose, matches, &initial.inliers);
    let after_same_set = inlier_rms(&intr, &pose, matches, &initial.inliers);
    let diverged = !(after_same_set <= before) || !(cost.is_finite());
    let mut out = initial.clone();
    if diverged {
        log::warn!("query refinement diverged ({before:.4} -> {after_same_set:.4} px); keeping initial estimate");
    } else {
        out.intrinsics = intr;
        out.pose = pose;
        out.num_inliers = mask.iter().filter(|&&b| b).count();
        out.inliers = mask;
        out.rms_px = inlier_rms(&out.intrinsics, &out.pose, matches, &out.inliers);
    }
    let names: Vec<String> = INTRINSIC_NAMES
        .iter()
        .zip(out.intrinsics.as_array())
        .map(|(n, v)| format!("{n}={v:.6}"))
        .collect();
    log::info!(
        "refinement: {} inliers, rms {:.4} px, {}",
        out.num_inliers,
        out.rms_px,
        names.join(" ")
    );
    out.refinement = Some(RefineReport {
        initial_cost: c0,
        final_cost: cost,
        iterations: iters,
        inliers_before: initial.num_inliers,
        inliers_after: out.num_inliers,
        diverged,
    });
    Ok(out)
}

/// Refinement that re-adjusts the database reconstruction jointly with the query.
///
/// Returns the refined result and the re-adjusted reconstruction.
pub fn refine_query_joint(
    recon: &Reconstruction,
    initial: &LocalizationResult,
    matches: &QueryMatches,
    threshold_px: f64,
    opts: &RefineOptions,
    ba: &BaConfig,
) -> Result<(LocalizationResult, Reconstruction)> {
    let cfg = BaConfig {
        free_views: None,
        pano_mode: if ba.pano_mode == PanoMode::Off { PanoMode::Off } else { PanoMode::Soft },
        ..ba.clone()
    };
    let mut adjusted = recon.clone();
    let result = refine_with(initial, matches, threshold_px, opts, |intr, pose, m, mask, o| {
        let (mut problem, map) = build_ba_problem(&adjusted, &cfg)?;
        let index: HashMap<u64, usize> = map.point_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let pb = problem.add_pose(PoseParam::new(pose.rotation, pose.center).with_label("query"));
        let v = problem.add_view(pb, Rotation::identity());
        let ii = problem.add_intrinsics(IntrinsicsParam {
            intrinsics: *intr,
            free: intrinsics_free(o),
        });
        for (r, _) in m.resolved.iter().zip(mask).filter(|(_, &k)| k) {
            let Some(&p) = index.get(&r.point_id) else {
                continue;
            };
            problem.add_residual(
                ResidualKind::Reprojection {
                    view: v,
                    point: p,
                    intrinsics: ii,
                    observed: r.query_pixel,
                },
                1.0,
                RobustLoss::Huber(o.huber_delta),
            );
        }
        let (params, report) = solve_lm(&problem, &o.lm)?;
        let (rot, c) = params.poses[pb];
        let qi = params.intrinsics[ii];
        apply_params(&mut adjusted, &problem, &map, &params);
        Ok((qi, ViewPose::new(rot, c), report.initial_cost, report.final_cost, report.iterations))
    })?;
    Ok((result, adjusted))
}
