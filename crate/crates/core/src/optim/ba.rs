//! Bundle adjustment problems built from a [`Reconstruction`].

use std::collections::{BTreeMap, BTreeSet};

use super::lm::{solve_lm, LmOptions, SolveReport};
use super::problem::{IntrinsicsParam, Params, PoseParam, Problem, ResidualKind, RobustLoss};
use super::residuals::slot_relative_rotation;
use crate::geometry::{slot_rotation, Rotation};
use crate::sfm::{parse_view_id, Reconstruction, ScaleState};
use crate::{Error, Result};

/// How panorama structure enters the adjustment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PanoMode {
    /// Weighted translation and rotation residuals between consecutive slots.
    #[default]
    Soft,
    /// One pose block per panorama; slot views are derived from it.
    Hard,
    /// Views are adjusted independently.
    Off,
}

impl std::str::FromStr for PanoMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(PanoMode::Soft),
            "hard" => Ok(PanoMode::Hard),
            "off" | "none" => Ok(PanoMode::Off),
            _ => Err(Error::Usage(format!("unknown pano mode `{s}` (soft|hard|off)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaConfig {
    pub pano_weight: f64,
    pub fix_intrinsics: bool,
    pub robust_delta: f64,
    pub pano_mode: PanoMode,
    /// Restricts adjustment to these view indices; other views are held fixed.
    pub free_views: Option<BTreeSet<usize>>,
    /// Gauge anchor view; defaults to the first registered view.
    pub anchor_view: Option<usize>,
}

impl Default for BaConfig {
    fn default() -> Self {
        BaConfig {
            pano_weight: 1e4,
            fix_intrinsics: true,
            robust_delta: 2.0,
            pano_mode: PanoMode::Soft,
            free_views: None,
            anchor_view: None,
        }
    }
}

/// Correspondence between problem blocks and reconstruction entities.
#[derive(Clone, Debug, Default)]
pub struct BaMapping {
    /// Problem view index per reconstruction view.
    pub view_link: Vec<Option<usize>>,
    /// Reconstruction point id per problem point.
    pub point_ids: Vec<u64>,
    /// Intrinsics id per problem intrinsics block.
    pub intrinsics_ids: Vec<String>,
    /// Consecutive-slot pairs that received panoramic residuals.
    pub pano_pairs: usize,
}

fn pano_key(recon: &Reconstruction, view: usize) -> Option<(String, usize)> {
    let v = &recon.views[view];
    if let Some(p) = &v.pose.pano {
        return Some((p.pano_id.clone(), p.slot));
    }
    parse_view_id(&v.id).map(|(p, s)| (p.to_string(), s))
}

pub fn build_ba_problem(recon: &Reconstruction, cfg: &BaConfig) -> Result<(Problem, BaMapping)> {
    let registered: Vec<usize> = (0..recon.views.len())
        .filter(|&i| recon.views[i].registered)
        .collect();
    if registered.len() < 2 || recon.points.is_empty() {
        return Err(Error::validation(
            "bundle adjustment needs at least 2 registered views and 1 point",
        ));
    }
    if !(cfg.pano_weight >= 0.0 && cfg.pano_weight.is_finite()) {
        return Err(Error::validation(format!("pano weight {} must be >= 0", cfg.pano_weight)));
    }
    let t = recon.views_per_pano;
    let is_free = |v: usize| cfg.free_views.as_ref().is_none_or(|s| s.contains(&v));

    let mut problem = Problem::default();
    let mut map = BaMapping {
        view_link: vec![None; recon.views.len()],
        ..Default::default()
    };

    let mut intr_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (id, intr) in &recon.intrinsics {
        let used = registered
            .iter()
            .any(|&v| is_free(v) && recon.views[v].intrinsics_id == *id);
        let free = [!cfg.fix_intrinsics && used; 8];
        intr_index.insert(id.as_str(), problem.add_intrinsics(IntrinsicsParam { intrinsics: *intr, free }));
        map.intrinsics_ids.push(id.clone());
    }

    // Pose blocks: per registered view, or per panorama in hard mode.
    let mut pano_block: BTreeMap<String, usize> = BTreeMap::new();
    for &v in &registered {
        let view = &recon.views[v];
        let key = if cfg.pano_mode == PanoMode::Hard && t > 0 {
            pano_key(recon, v)
        } else {
            None
        };
        let link = match key {
            Some((pano, slot)) => {
                let offset = slot_rotation(t, slot);
                let block = match pano_block.get(&pano) {
                    Some(&b) => {
                        if is_free(v) {
                            problem.poses[b].free = [true; 6];
                        }
                        b
                    }
                    None => {
                        let rot = Rotation::from_matrix_unchecked(
                            view.pose.rotation.matrix() * offset.transpose_matrix(),
                        )
                        .renormalized();
                        let mut p = PoseParam::new(rot, view.pose.center).with_label(pano.clone());
                        if !is_free(v) {
                            p.free = [false; 6];
                        }
                        let b = problem.add_pose(p);
                        pano_block.insert(pano, b);
                        b
                    }
                };
                problem.add_view(block, offset)
            }
            None => {
                let mut p = PoseParam::new(view.pose.rotation, view.pose.center).with_label(view.id.clone());
                if !is_free(v) {
                    p.free = [false; 6];
                }
                let b = problem.add_pose(p);
                problem.add_view(b, Rotation::identity())
            }
        };
        map.view_link[v] = Some(link);
    }

    let loss = RobustLoss::Huber(cfg.robust_delta);
    for (&id, point) in &recon.points {
        if !point.observations.iter().any(|o| is_free(o.view)) {
            continue;
        }
        let pi = problem.add_point(point.xyz, true);
        map.point_ids.push(id);
        for o in &point.observations {
            let link = map.view_link[o.view].ok_or_else(|| {
                Error::validation(format!(
                    "point {id} observed by unregistered view {}",
                    recon.views[o.view].id
                ))
            })?;
            let intr = intr_index[recon.views[o.view].intrinsics_id.as_str()];
            problem.add_residual(
                ResidualKind::Reprojection {
                    view: link,
                    point: pi,
                    intrinsics: intr,
                    observed: o.pixel,
                },
                1.0,
                loss,
            );
        }
    }

    if cfg.pano_mode == PanoMode::Soft && t >= 2 {
        let mut slots: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
        for &v in &registered {
            if let Some((pano, slot)) = pano_key(recon, v) {
                slots.entry(pano).or_default().insert(slot, v);
            }
        }
        let target = slot_relative_rotation(t);
        for views in slots.values() {
            for j in 1..t {
                let (Some(&a), Some(&b)) = (views.get(&(j - 1)), views.get(&j)) else {
                    continue;
                };
                if !is_free(a) && !is_free(b) {
                    continue;
                }
                let (la, lb) = (map.view_link[a].unwrap(), map.view_link[b].unwrap());
                problem.add_residual(
                    ResidualKind::PanoTranslation { view_a: la, view_b: lb },
                    cfg.pano_weight,
                    RobustLoss::None,
                );
                problem.add_residual(
                    ResidualKind::PanoRotation {
                        view_a: la,
                        view_b: lb,
                        target,
                    },
                    cfg.pano_weight,
                    RobustLoss::None,
                );
                map.pano_pairs += 1;
            }
        }
    }

    // Views without any residual are held fixed.
    let mut touched = vec![false; problem.poses.len()];
    for b in &problem.residuals {
        match &b.kind {
            ResidualKind::Reprojection { view, .. } => touched[problem.views[*view].pose] = true,
            ResidualKind::PanoTranslation { view_a, view_b }
            | ResidualKind::PanoRotation { view_a, view_b, .. } => {
                touched[problem.views[*view_a].pose] = true;
                touched[problem.views[*view_b].pose] = true;
            }
        }
    }
    for (p, t) in problem.poses.iter_mut().zip(&touched) {
        if !t {
            p.free = [false; 6];
        }
    }

    let all_free = registered.iter().all(|&v| is_free(v));
    if all_free {
        fix_gauge(recon, cfg, &registered, &map, &mut problem);
    }
    Ok((problem, map))
}

fn fix_gauge(recon: &Reconstruction, cfg: &BaConfig, registered: &[usize], map: &BaMapping, problem: &mut Problem) {
    let anchor = cfg
        .anchor_view
        .filter(|v| map.view_link.get(*v).copied().flatten().is_some())
        .unwrap_or(registered[0]);
    let anchor_block = problem.views[map.view_link[anchor].unwrap()].pose;
    problem.poses[anchor_block].free = [false; 6];
    if recon.scale_state == ScaleState::Metric {
        return;
    }
    let c0 = problem.poses[anchor_block].center;
    let mut best: Option<(f64, usize)> = None;
    for &v in registered {
        let block = problem.views[map.view_link[v].unwrap()].pose;
        if block == anchor_block || !problem.poses[block].any_free() {
            continue;
        }
        let d = (problem.poses[block].center - c0).norm();
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, block));
        }
    }
    if let Some((_, block)) = best {
        let delta = problem.poses[block].center - c0;
        let axis = delta.iamax();
        problem.poses[block].free[3 + axis] = false;
    }
}

/// Writes solved parameters back into the reconstruction.
pub fn apply_params(recon: &mut Reconstruction, problem: &Problem, map: &BaMapping, params: &Params) {
    for (v, link) in map.view_link.iter().enumerate() {
        if let Some(l) = link {
            let vl = &problem.views[*l];
            let (r, c) = &params.poses[vl.pose];
            let pose = &mut recon.views[v].pose;
            pose.rotation = r.compose(&vl.offset).renormalized();
            pose.center = *c;
        }
    }
    for (i, id) in map.point_ids.iter().enumerate() {
        if let Some(p) = recon.points.get_mut(id) {
            p.xyz = params.points[i];
        }
    }
    for (i, id) in map.intrinsics_ids.iter().enumerate() {
        recon.intrinsics.insert(id.clone(), params.intrinsics[i]);
    }
}

/// Builds, solves, and writes back one bundle adjustment.
pub fn bundle_adjust(recon: &mut Reconstruction, cfg: &BaConfig, options: &LmOptions) -> Result<SolveReport> {
    let (problem, map) = build_ba_problem(recon, cfg)?;
    let (params, report) = solve_lm(&problem, options)?;
    apply_params(recon, &problem, &map, &params);
    Ok(report)
}
