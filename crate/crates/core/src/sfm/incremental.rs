//! Incremental reconstruction: bootstrap, register, triangulate, adjust.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::p3p::{register_view_p3p, PnpOptions};
use super::recon::{view_id, Observation, Point3D, Reconstruction, ScaleState, View};
use super::tracks::{build_tracks, MatchSet, PixelLabels, PixelMask, Track, TrackStats};
use super::triangulate::{max_ray_angle_deg, triangulate_robust};
use super::twoview::{bootstrap_two_view_with, TwoViewOptions};
use crate::geometry::{project, slot_rotation, PanoramaMeta, Rotation, SamplingConfig, Vec2, Vec3, ViewPose};
use crate::optim::{bundle_adjust, BaConfig, LmOptions, PanoMode, SolveReport};
use crate::{Error, Result};

pub const DB_INTRINSICS: &str = "db";

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOptions {
    pub ba: BaConfig,
    pub lm: LmOptions,
    pub two_view: TwoViewOptions,
    pub pnp: PnpOptions,
    /// Observations reprojecting further than this are pruned.
    pub max_reproj_px: f64,
    /// Points whose rays span less than this are pruned.
    pub min_tri_angle_deg: f64,
    /// 2D-3D correspondences needed before a view is tried.
    pub min_registration_matches: usize,
    /// P3P inliers needed to accept a registration.
    pub min_registration_inliers: usize,
    /// Most-matched cross-panorama pairs scored for bootstrapping.
    pub bootstrap_candidates: usize,
    /// Global adjustment runs each time the registered count grows by this factor.
    pub global_ba_growth: f64,
    pub local_ba_neighbors: usize,
    pub local_ba_max_iter: usize,
    pub mask: Option<PixelMask>,
    /// Labelled road-surface feature pixels `(view id, pixel)`.
    pub road_labels: Vec<(String, Vec2)>,
    pub seed: u64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            ba: BaConfig::default(),
            lm: LmOptions::default(),
            two_view: TwoViewOptions::default(),
            pnp: PnpOptions::default(),
            max_reproj_px: 4.0,
            min_tri_angle_deg: 1.0,
            min_registration_matches: 12,
            min_registration_inliers: 8,
            bootstrap_candidates: 20,
            global_ba_growth: 1.25,
            local_ba_neighbors: 8,
            local_ba_max_iter: 10,
            mask: None,
            road_labels: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionSummary {
    pub total_views: usize,
    pub registered_views: usize,
    pub unregistered: Vec<String>,
    pub points: usize,
    pub observations: usize,
    pub rms_reprojection_px: f64,
    pub bootstrap_pair: (String, String),
    pub global_ba_runs: usize,
    pub final_ba: Option<SolveReport>,
    pub tracks: usize,
    pub track_stats: TrackStats,
    pub sibling_registrations: usize,
}

struct State<'a> {
    recon: Reconstruction,
    tracks: Vec<Track>,
    /// Index into each track's observations per (view, track).
    view_tracks: Vec<Vec<(usize, usize)>>,
    has_point: Vec<bool>,
    labels: PixelLabels,
    opts: &'a ReconstructOptions,
    anchor: usize,
}

impl State<'_> {
    fn intr(&self) -> crate::geometry::CameraIntrinsics {
        self.recon.intrinsics[DB_INTRINSICS]
    }

    fn pano_of(&self, v: usize) -> Option<(&str, usize)> {
        self.recon.views[v].pose.pano.as_ref().map(|p| (p.pano_id.as_str(), p.slot))
    }

    fn siblings(&self, v: usize) -> Vec<usize> {
        let Some((pano, _)) = self.pano_of(v) else {
            return Vec::new();
        };
        (0..self.recon.views.len())
            .filter(|&u| u != v && self.pano_of(u).is_some_and(|(p, _)| p == pano))
            .collect()
    }

    /// Pose implied for `v` by a registered view of the same panorama.
    fn sibling_pose(&self, v: usize) -> Option<ViewPose> {
        let (_, slot) = self.pano_of(v)?;
        let t = self.recon.views_per_pano;
        let s = self
            .siblings(v)
            .into_iter()
            .find(|&u| self.recon.views[u].registered)?;
        let (_, s_slot) = self.pano_of(s)?;
        let sp = &self.recon.views[s].pose;
        let r_pano = sp.rotation.compose(&slot_rotation(t, s_slot).inverse());
        Some(ViewPose {
            rotation: r_pano.compose(&slot_rotation(t, slot)),
            center: sp.center,
            pano: self.recon.views[v].pose.pano.clone(),
        })
    }

    fn reproj_error(&self, v: usize, x: &Vec3, px: &Vec2) -> f64 {
        match project(&self.intr(), &self.recon.views[v].pose, x) {
            Ok(p) => (p - px).norm(),
            Err(_) => f64::INFINITY,
        }
    }

    /// Marks `v` registered and attaches its observations of existing points.
    fn register(&mut self, v: usize, pose: ViewPose) {
        let pano = self.recon.views[v].pose.pano.clone();
        self.recon.views[v].pose = ViewPose { pano, ..pose };
        self.recon.views[v].registered = true;
        for k in 0..self.view_tracks[v].len() {
            let (t, oi) = self.view_tracks[v][k];
            if !self.has_point[t] {
                continue;
            }
            let px = self.tracks[t].observations[oi].1;
            let x = self.recon.points[&(t as u64)].xyz;
            if self.reproj_error(v, &x, &px) <= self.opts.max_reproj_px {
                let p = self.recon.points.get_mut(&(t as u64)).unwrap();
                if !p.observations.iter().any(|o| o.view == v) {
                    p.observations.push(Observation { view: v, pixel: px });
                }
            }
        }
    }

    /// Registers `v`, and in hard mode every other slot of its panorama.
    fn register_group(&mut self, v: usize, pose: ViewPose) -> Vec<usize> {
        self.register(v, pose);
        let mut added = vec![v];
        if self.opts.ba.pano_mode == PanoMode::Hard {
            for u in self.siblings(v) {
                if !self.recon.views[u].registered {
                    let p = self.sibling_pose(u).expect("registered sibling exists");
                    self.register(u, p);
                    added.push(u);
                }
            }
        }
        added
    }

    fn triangulate_new(&mut self, views: &[usize]) -> usize {
        let mut cand: BTreeSet<usize> = BTreeSet::new();
        for &v in views {
            for &(t, _) in &self.view_tracks[v] {
                if !self.has_point[t] {
                    cand.insert(t);
                }
            }
        }
        let intr = self.intr();
        let cand: Vec<usize> = cand.into_iter().collect();
        let results: Vec<Option<(Vec3, Vec<Observation>)>> = cand
            .par_iter()
            .map(|&t| {
                let obs: Vec<(usize, Vec2)> = self.tracks[t]
                    .observations
                    .iter()
                    .filter(|(v, _)| self.recon.views[*v].registered)
                    .copied()
                    .collect();
                if obs.len() < 2 {
                    return None;
                }
                let vi: Vec<_> = obs.iter().map(|(v, _)| (&self.recon.views[*v].pose, &intr)).collect();
                let px: Vec<Vec2> = obs.iter().map(|o| o.1).collect();
                let (x, keep) =
                    triangulate_robust(&vi, &px, self.opts.max_reproj_px, self.opts.min_tri_angle_deg).ok()?;
                Some((
                    x,
                    keep.into_iter()
                        .map(|k| Observation {
                            view: obs[k].0,
                            pixel: obs[k].1,
                        })
                        .collect(),
                ))
            })
            .collect();
        let mut added = 0;
        for (&t, r) in cand.iter().zip(results) {
            if let Some((xyz, observations)) = r {
                let road_mark = self.tracks[t]
                    .observations
                    .iter()
                    .any(|(v, px)| self.labels.contains(*v, px));
                self.recon.points.insert(
                    t as u64,
                    Point3D {
                        xyz,
                        road_mark,
                        observations,
                    },
                );
                self.has_point[t] = true;
                added += 1;
            }
        }
        added
    }

    /// Drops bad observations and weak points; returns the number of points removed.
    fn prune(&mut self) -> usize {
        let intr = self.intr();
        let max_err = self.opts.max_reproj_px;
        let min_angle = self.opts.min_tri_angle_deg;
        let views = &self.recon.views;
        let mut remove = Vec::new();
        for (&id, p) in self.recon.points.iter_mut() {
            p.observations.retain(|o| match project(&intr, &views[o.view].pose, &p.xyz) {
                Ok(q) => (q - o.pixel).norm() <= max_err,
                Err(_) => false,
            });
            let centers: Vec<Vec3> = p.observations.iter().map(|o| views[o.view].pose.center).collect();
            if p.observations.len() < 2 || max_ray_angle_deg(&centers, &p.xyz) < min_angle {
                remove.push(id);
            }
        }
        for id in &remove {
            self.recon.points.remove(id);
            self.has_point[*id as usize] = false;
        }
        remove.len()
    }

    fn correspondences(&self, v: usize) -> (Vec<Vec3>, Vec<Vec2>) {
        let mut pts = Vec::new();
        let mut pxs = Vec::new();
        for &(t, oi) in &self.view_tracks[v] {
            if self.has_point[t] {
                pts.push(self.recon.points[&(t as u64)].xyz);
                pxs.push(self.tracks[t].observations[oi].1);
            }
        }
        (pts, pxs)
    }

    fn neighbors(&self, views: &[usize]) -> Vec<usize> {
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for &v in views {
            for &(t, _) in &self.view_tracks[v] {
                if let Some(p) = self.recon.points.get(&(t as u64)) {
                    for o in &p.observations {
                        if !views.contains(&o.view) {
                            *shared.entry(o.view).or_default() += 1;
                        }
                    }
                }
            }
        }
        let mut ranked: Vec<(usize, usize)> = shared.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(self.opts.local_ba_neighbors)
            .map(|(v, _)| v)
            .collect()
    }

    fn ba_config(&self, free: Option<BTreeSet<usize>>) -> BaConfig {
        BaConfig {
            free_views: free,
            anchor_view: Some(self.anchor),
            ..self.opts.ba.clone()
        }
    }

    fn local_ba(&mut self, new_views: &[usize]) {
        let mut free: BTreeSet<usize> = new_views.iter().copied().collect();
        free.extend(self.neighbors(new_views));
        if self.opts.ba.pano_mode == PanoMode::Hard {
            let extra: Vec<usize> = free.iter().flat_map(|&v| self.siblings(v)).collect();
            free.extend(extra.into_iter().filter(|&u| self.recon.views[u].registered));
        }
        let cfg = self.ba_config(Some(free));
        let lm = LmOptions {
            max_iter: self.opts.local_ba_max_iter,
            ..self.opts.lm
        };
        if let Err(e) = bundle_adjust(&mut self.recon, &cfg, &lm) {
            log::warn!("local adjustment skipped: {e}");
        }
    }

    fn global_ba(&mut self) -> Result<SolveReport> {
        let cfg = self.ba_config(None);
        bundle_adjust(&mut self.recon, &cfg, &self.opts.lm).map_err(|e| Error::ReconstructionFailed {
            stage: "global bundle adjustment".into(),
            message: e.to_string(),
        })
    }
}

/// Views in panorama order, slots ascending.
pub fn panorama_views(panos: &[PanoramaMeta], cfg: &SamplingConfig) -> Vec<View> {
    let mut views = Vec::with_capacity(panos.len() * cfg.views_per_pano);
    for p in panos {
        for j in 0..cfg.views_per_pano {
            views.push(View {
                id: view_id(&p.pano_id, j),
                pose: ViewPose::new(Rotation::identity(), Vec3::zeros()).with_pano(p.pano_id.clone(), j),
                intrinsics_id: DB_INTRINSICS.into(),
                registered: false,
            });
        }
    }
    views
}

/// Incremental reconstruction from panorama views and their correspondences.
pub fn reconstruct(
    panos: &[PanoramaMeta],
    cfg: &SamplingConfig,
    matches: &MatchSet,
    opts: &ReconstructOptions,
) -> Result<(Reconstruction, ReconstructionSummary)> {
    cfg.validate()?;
    if panos.len() < 2 {
        return Err(Error::validation(format!(
            "reconstruction needs N ≥ 2 panoramas, got {}",
            panos.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for p in panos {
        p.validate()?;
        if p.pano_id.contains('#') {
            return Err(Error::validation(format!("panorama id {} contains '#'", p.pano_id)));
        }
        if !ids.insert(p.pano_id.as_str()) {
            return Err(Error::validation(format!("duplicate panorama id {}", p.pano_id)));
        }
    }
    let intr = cfg.intrinsics();
    let views = panorama_views(panos, cfg);
    let recon = Reconstruction {
        views,
        intrinsics: [(DB_INTRINSICS.to_string(), intr)].into(),
        points: BTreeMap::new(),
        scale_state: ScaleState::Arbitrary,
        views_per_pano: cfg.views_per_pano,
        enu_origin: None,
    };
    let lookup = recon.view_lookup();
    matches.validate(|v| lookup.contains_key(v).then_some(intr))?;
    let matches = match &opts.mask {
        Some(m) => m.apply(matches),
        None => matches.clone(),
    };
    let (tracks, track_stats) = build_tracks(&matches, &lookup);
    log::info!(
        "{} tracks from {} correspondences ({} conflicting links dropped)",
        tracks.len(),
        track_stats.links,
        track_stats.conflicting_links
    );
    let mut view_tracks = vec![Vec::new(); recon.views.len()];
    for (t, tr) in tracks.iter().enumerate() {
        for (oi, (v, _)) in tr.observations.iter().enumerate() {
            view_tracks[*v].push((t, oi));
        }
    }
    let labels = PixelLabels::new(&opts.road_labels, &lookup);
    drop(lookup);

    // Bootstrap pair.
    let pano_index = |v: usize| v / cfg.views_per_pano;
    let view_index = recon.view_lookup();
    let mut pair_matches: BTreeMap<(usize, usize), (Vec<Vec2>, Vec<Vec2>)> = BTreeMap::new();
    for p in &matches.pairs {
        let (a, b) = (view_index[p.view_a.as_str()], view_index[p.view_b.as_str()]);
        if pano_index(a) == pano_index(b) {
            continue;
        }
        let e = pair_matches.entry((a.min(b), a.max(b))).or_default();
        for (pa, pb) in &p.matches {
            if a < b {
                e.0.push(*pa);
                e.1.push(*pb);
            } else {
                e.0.push(*pb);
                e.1.push(*pa);
            }
        }
    }
    drop(view_index);
    let mut candidates: Vec<(usize, usize)> = pair_matches.keys().copied().collect();
    candidates.sort_by(|x, y| {
        pair_matches[y].0.len().cmp(&pair_matches[x].0.len()).then_with(|| {
            (&recon.views[x.0].id, &recon.views[x.1].id).cmp(&(&recon.views[y.0].id, &recon.views[y.1].id))
        })
    });
    candidates.truncate(opts.bootstrap_candidates);
    let scored: Vec<Option<(f64, super::twoview::TwoViewResult)>> = candidates
        .par_iter()
        .enumerate()
        .map(|(k, pair)| {
            let (pa, pb) = &pair_matches[pair];
            let mut tv = opts.two_view;
            tv.ransac.seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            match bootstrap_two_view_with(pa, pb, &intr, &intr, &tv) {
                Ok(r) => Some((r.num_inliers as f64 * r.median_angle_deg, r)),
                Err(e) => {
                    log::debug!("bootstrap candidate {k} rejected: {e}");
                    None
                }
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scored.iter().enumerate() {
        if let Some((score, _)) = s {
            if best.is_none_or(|(_, b)| *score > b) {
                best = Some((k, *score));
            }
        }
    }
    let Some((bk, _)) = best else {
        return Err(Error::ReconstructionFailed {
            stage: "bootstrap".into(),
            message: format!("all {} candidate pairs failed two-view initialization", candidates.len()),
        });
    };
    let (va, vb) = candidates[bk];
    let boot = scored[bk].as_ref().unwrap().1.clone();
    log::info!(
        "bootstrap {} - {}: {} inliers, median angle {:.2} deg",
        recon.views[va].id,
        recon.views[vb].id,
        boot.num_inliers,
        boot.median_angle_deg
    );

    let n_tracks = tracks.len();
    let mut st = State {
        recon,
        tracks,
        view_tracks,
        has_point: vec![false; n_tracks],
        labels,
        opts,
        anchor: va,
    };
    let mut new_views = st.register_group(va, ViewPose::identity());
    new_views.extend(st.register_group(vb, boot.pose_b.clone()));
    let n0 = st.triangulate_new(&new_views);
    if n0 < 8 {
        return Err(Error::ReconstructionFailed {
            stage: "bootstrap".into(),
            message: format!("only {n0} points triangulated from the initial pair"),
        });
    }
    let mut global_runs = 0;
    st.global_ba()?;
    global_runs += 1;
    st.prune();
    let mut last_global = st.recon.registered_count();

    let mut failed: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sibling_regs = 0;
    loop {
        let mut best: Option<(usize, usize)> = None;
        for v in 0..st.recon.views.len() {
            if st.recon.views[v].registered {
                continue;
            }
            let count = st.view_tracks[v].iter().filter(|(t, _)| st.has_point[*t]).count();
            if count < opts.min_registration_matches || failed.get(&v).is_some_and(|&c| count <= c) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, bc)) => count > bc || (count == bc && st.recon.views[v].id < st.recon.views[bv].id),
            };
            if better {
                best = Some((v, count));
            }
        }
        let sibling_ok = opts.ba.pano_mode != PanoMode::Off;
        let (v, pose) = match best {
            Some((v, count)) => {
                let (pts, pxs) = st.correspondences(v);
                let mut pnp = opts.pnp;
                pnp.ransac.seed = opts.seed.wrapping_mul(7_919).wrapping_add(v as u64);
                let reg = register_view_p3p(&pts, &pxs, &intr, &pnp)
                    .ok()
                    .filter(|(_, inl)| inl.iter().filter(|b| **b).count() >= opts.min_registration_inliers);
                match reg {
                    Some((pose, _)) => (v, pose),
                    None => match st.sibling_pose(v).filter(|_| sibling_ok) {
                        Some(p) => {
                            sibling_regs += 1;
                            (v, p)
                        }
                        None => {
                            log::debug!("registration of {} failed ({count} correspondences)", st.recon.views[v].id);
                            failed.insert(v, count);
                            continue;
                        }
                    },
                }
            }
            None => {
                let fallback = sibling_ok
                    .then(|| {
                        (0..st.recon.views.len())
                            .find(|&v| !st.recon.views[v].registered && st.sibling_pose(v).is_some())
                    })
                    .flatten();
                match fallback {
                    Some(v) => {
                        sibling_regs += 1;
                        (v, st.sibling_pose(v).unwrap())
                    }
                    None => break,
                }
            }
        };
        let added = st.register_group(v, pose);
        st.triangulate_new(&added);
        st.local_ba(&added);
        st.prune();
        let registered = st.recon.registered_count();
        if registered as f64 >= opts.global_ba_growth * last_global as f64 {
            st.global_ba()?;
            global_runs += 1;
            st.prune();
            last_global = registered;
        }
    }

    let mut final_report = st.global_ba()?;
    global_runs += 1;
    if st.prune() > 0 {
        final_report = st.global_ba()?;
        global_runs += 1;
        st.prune();
    }
    st.recon.validate()?;

    let recon = st.recon;
    let summary = ReconstructionSummary {
        total_views: recon.views.len(),
        registered_views: recon.registered_count(),
        unregistered: recon.views.iter().filter(|v| !v.registered).map(|v| v.id.clone()).collect(),
        points: recon.points.len(),
        observations: recon.observation_count(),
        rms_reprojection_px: recon.rms_reprojection(),
        bootstrap_pair: (recon.views[va].id.clone(), recon.views[vb].id.clone()),
        global_ba_runs: global_runs,
        final_ba: Some(final_report),
        tracks: n_tracks,
        track_stats,
        sibling_registrations: sibling_regs,
    };
    log::info!(
        "registered {}/{} views, {} points, rms {:.4} px",
        summary.registered_views,
        summary.total_views,
        summary.points,
        summary.rms_reprojection_px
    );
    Ok((recon, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, render_matches, NoiseSpec, SceneSpec};

    fn dataset(n_panos: usize, seed: u64) -> crate::synth::RenderedDataset {
        let b = generate_scene(&SceneSpec {
            n_panos,
            n_points: 1500,
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        render_matches(&b, &b.spec.sampling, &NoiseSpec::default()).unwrap()
    }

    #[test]
    fn noiseless_scene_registers_everything() {
        let r = dataset(10, 1);
        let (recon, s) = reconstruct(&r.panoramas, &SamplingConfig::default(), &r.matches, &ReconstructOptions::default()).unwrap();
        assert_eq!(s.total_views, 120);
        assert_eq!(s.registered_views, 120, "{:?}", s.unregistered);
        assert!(s.rms_reprojection_px < 1e-3, "{}", s.rms_reprojection_px);
        assert_eq!(recon.scale_state, ScaleState::Arbitrary);
        assert!(recon.enu_origin.is_none());
    }

    #[test]
    fn hard_mode_keeps_panoramas_rigid() {
        let r = dataset(4, 2);
        let mut opts = ReconstructOptions::default();
        opts.ba.pano_mode = PanoMode::Hard;
        let (recon, _) = reconstruct(&r.panoramas, &SamplingConfig::default(), &r.matches, &opts).unwrap();
        let t = recon.views_per_pano;
        for group in recon.views.chunks(t) {
            let c0 = group[0].pose.center;
            let r0 = group[0].pose.rotation.compose(&slot_rotation(t, 0).inverse());
            for (j, v) in group.iter().enumerate() {
                assert!((v.pose.center - c0).norm() < 1e-9);
                let rj = v.pose.rotation.compose(&slot_rotation(t, j).inverse());
                assert!(rj.angle_to(&r0) < 1e-9);
            }
        }
    }

    #[test]
    fn input_validation() {
        let r = dataset(3, 3);
        let cfg = SamplingConfig::default();
        let opts = ReconstructOptions::default();
        let err = reconstruct(&r.panoramas[..1], &cfg, &r.matches, &opts).unwrap_err();
        assert!(err.to_string().contains("N ≥ 2"));
        let mut dup = r.panoramas.clone();
        dup[1].pano_id = dup[0].pano_id.clone();
        assert!(matches!(reconstruct(&dup, &cfg, &MatchSet::default(), &opts), Err(Error::Validation(_))));
        let mut hash = r.panoramas.clone();
        hash[0].pano_id = "a#b".into();
        assert!(matches!(reconstruct(&hash, &cfg, &MatchSet::default(), &opts), Err(Error::Validation(_))));
    }

    #[test]
    fn same_seed_same_reconstruction() {
        let r = dataset(3, 4);
        let cfg = SamplingConfig::default();
        let a = reconstruct(&r.panoramas, &cfg, &r.matches, &ReconstructOptions::default()).unwrap().0;
        let b = reconstruct(&r.panoramas, &cfg, &r.matches, &ReconstructOptions::default()).unwrap().0;
        assert_eq!(a, b);
    }
}
