//! Rendering ground truth into the inputs a real deployment would provide.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{visible_pixel, GroundTruthBundle};
use crate::geodesy::enu_to_geodetic;
use crate::geometry::{project, PanoramaMeta, SamplingConfig, Vec2, Vec3};
use crate::groundplane::GroundMark;
use crate::localize::RawQueryMatch;
use crate::sfm::{view_id, MatchSet, PairMatches};
use crate::traffic::{GroundTrack, ImageTrack};
use crate::{Error, Result};

use super::NoiseSpec;

/// View pairs sharing fewer points are not emitted.
pub const MIN_PAIR_MATCHES: usize = 15;

/// Bookkeeping that only the generator knows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderTruth {
    pub db_matches: usize,
    pub db_outliers: usize,
    pub query_matches: usize,
    pub query_outliers: usize,
    /// Generating point per query match; `None` for outliers.
    pub query_points: Vec<Option<usize>>,
    /// True ground positions of every emitted track sample, aligned with `tracks`.
    pub track_ground: Vec<GroundTrack>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedDataset {
    pub panoramas: Vec<PanoramaMeta>,
    pub matches: MatchSet,
    pub road_labels: Vec<(String, Vec2)>,
    pub query_matches: Vec<RawQueryMatch>,
    pub query_size: (u32, u32),
    pub marks: Vec<GroundMark>,
    pub trap_pixels: (Vec2, Vec2),
    pub tracks: Vec<ImageTrack>,
    pub truth: RenderTruth,
}

fn uniform_pixel(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Vec2 {
    Vec2::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))
}

/// Projects the scene into every perspective view and the query camera, adding noise and outliers.
pub fn render_matches(bundle: &GroundTruthBundle, cfg: &SamplingConfig, noise: &NoiseSpec) -> Result<RenderedDataset> {
    cfg.validate()?;
    noise.validate()?;
    let spec = &bundle.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.unwrap_or(spec.seed) ^ 0x9e37_79b9_7f4a_7c15);
    let pixel = Normal::new(0.0, noise.pixel_sigma.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let gps = Normal::new(0.0, noise.gps_sigma_m.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let jitter = |rng: &mut ChaCha8Rng, p: Vec2| {
        if noise.pixel_sigma > 0.0 {
            p + Vec2::new(pixel.sample(rng), pixel.sample(rng))
        } else {
            p
        }
    };

    let db_intr = cfg.intrinsics();
    let t = cfg.views_per_pano;
    let views: Vec<_> = bundle
        .panos
        .iter()
        .flat_map(|p| (0..t).map(move |j| (view_id(&p.pano_id, j), p.view_pose(cfg, j))))
        .collect();

    let panoramas = bundle
        .panos
        .iter()
        .map(|p| {
            let offset = if noise.gps_sigma_m > 0.0 {
                Vec3::new(gps.sample(&mut rng), gps.sample(&mut rng), gps.sample(&mut rng))
            } else {
                Vec3::zeros()
            };
            Ok(PanoramaMeta {
                pano_id: p.pano_id.clone(),
                geodetic: enu_to_geodetic(&spec.origin, &(p.center + offset))?,
                heading_deg: p.heading_deg,
                width: spec.pano_width,
                height: spec.pano_width / 2,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Noisy observation of every point in every view that sees it.
    let qi = &bundle.query_intrinsics;
    let qp = &bundle.query_pose;
    let mut obs: Vec<Vec<(usize, Vec2)>> = Vec::with_capacity(bundle.points.len());
    let mut query_obs: Vec<Option<Vec2>> = Vec::with_capacity(bundle.points.len());
    for pt in &bundle.points {
        let mut o = Vec::new();
        for (vi, (_, pose)) in views.iter().enumerate() {
            if let Some(px) = visible_pixel(&db_intr, pose, &pt.xyz, &pt.normal, spec.max_range_m) {
                let px = jitter(&mut rng, px);
                if db_intr.contains(&px) {
                    o.push((vi, px));
                }
            }
        }
        obs.push(o);
        let q = visible_pixel(qi, qp, &pt.xyz, &pt.normal, f64::INFINITY)
            .map(|px| jitter(&mut rng, px))
            .filter(|px| qi.contains(px));
        query_obs.push(q);
    }

    let mut truth = RenderTruth::default();
    let mut pair_points: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, o) in obs.iter().enumerate() {
        for i in 0..o.len() {
            for j in i + 1..o.len() {
                pair_points.entry((o[i].0, o[j].0)).or_default().push(k);
            }
        }
    }
    let mut pairs = Vec::new();
    for ((a, b), pts) in &pair_points {
        if pts.len() < MIN_PAIR_MATCHES {
            continue;
        }
        let find = |k: usize, v: usize| obs[k].iter().find(|(vi, _)| *vi == v).unwrap().1;
        let matches = pts
            .iter()
            .map(|&k| {
                let pb = if rng.random_bool(noise.outlier_fraction) {
                    truth.db_outliers += 1;
                    uniform_pixel(&mut rng, db_intr.width, db_intr.height)
                } else {
                    find(k, *b)
                };
                (find(k, *a), pb)
            })
            .collect::<Vec<_>>();
        truth.db_matches += matches.len();
        pairs.push(PairMatches {
            view_a: views[*a].0.clone(),
            view_b: views[*b].0.clone(),
            matches,
        });
    }

    let road_labels = bundle
        .points
        .iter()
        .zip(&obs)
        .filter(|(p, _)| p.road_mark)
        .flat_map(|(_, o)| o.iter().map(|(v, px)| (views[*v].0.clone(), *px)))
        .collect();

    let mut query_matches = Vec::new();
    for (vi, (vid, _)) in views.iter().enumerate() {
        let shared: Vec<(usize, Vec2, Vec2)> = obs
            .iter()
            .enumerate()
            .filter_map(|(k, o)| {
                let q = query_obs[k]?;
                let d = o.iter().find(|(v, _)| *v == vi)?.1;
                Some((k, q, d))
            })
            .collect();
        if shared.len() < MIN_PAIR_MATCHES {
            continue;
        }
        for (k, q, d) in shared {
            let (q, src) = if rng.random_bool(noise.outlier_fraction) {
                truth.query_outliers += 1;
                (uniform_pixel(&mut rng, qi.width, qi.height), None)
            } else {
                (q, Some(k))
            };
            truth.query_points.push(src);
            query_matches.push(RawQueryMatch {
                query_pixel: q,
                db_view: vid.clone(),
                db_pixel: d,
            });
        }
    }
    truth.query_matches = query_matches.len();

    let marks = bundle
        .marks
        .iter()
        .map(|m| GroundMark {
            pixel_a: m.pixel_a,
            pixel_b: m.pixel_b,
            gt_distance_m: Some(m.distance_m),
        })
        .collect();
    let trap_pixels = (project(qi, qp, &bundle.trap.a)?, project(qi, qp, &bundle.trap.b)?);

    let mut tracks = Vec::new();
    for v in &bundle.vehicles {
        let mut samples = Vec::new();
        let mut ground = Vec::new();
        for (ts, x) in &v.track.samples {
            let Some(px) = visible_pixel(qi, qp, x, &bundle.plane.normal, f64::INFINITY) else {
                continue;
            };
            let px = jitter(&mut rng, px);
            if qi.contains(&px) {
                samples.push((*ts, px));
                ground.push((*ts, *x));
            }
        }
        if samples.len() >= 2 {
            tracks.push(ImageTrack {
                track_id: v.track.track_id.clone(),
                samples,
            });
            truth.track_ground.push(GroundTrack {
                track_id: v.track.track_id.clone(),
                samples: ground,
            });
        }
    }

    Ok(RenderedDataset {
        panoramas,
        matches: MatchSet { pairs },
        road_labels,
        query_matches,
        query_size: (qi.width, qi.height),
        marks,
        trap_pixels,
        tracks,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, SceneSpec};
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            n_panos: 4,
            n_points: 400,
            seed: 3,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn noiseless_matches_are_exact_projections() {
        let b = generate_scene(&spec()).unwrap();
        let r = render_matches(&b, &b.spec.sampling, &NoiseSpec::default()).unwrap();
        assert!(!r.matches.pairs.is_empty());
        assert_eq!(r.truth.db_outliers + r.truth.query_outliers, 0);
        for (m, src) in r.query_matches.iter().zip(&r.truth.query_points) {
            let k = src.unwrap();
            let p = project(&b.query_intrinsics, &b.query_pose, &b.points[k].xyz).unwrap();
            assert!((p - m.query_pixel).norm() < 1e-9);
            // Behind-camera points never reach the query match list.
            assert!(b.query_pose.world_to_camera(&b.points[k].xyz).z > 0.0);
        }
        for p in &r.matches.pairs {
            assert!(p.matches.len() >= MIN_PAIR_MATCHES);
        }
    }

    #[test]
    fn outlier_fraction_is_respected() {
        let b = generate_scene(&spec()).unwrap();
        let noise = NoiseSpec {
            outlier_fraction: 0.2,
            ..NoiseSpec::default()
        };
        let r = render_matches(&b, &b.spec.sampling, &noise).unwrap();
        let frac = r.truth.db_outliers as f64 / r.truth.db_matches as f64;
        // Binomial with thousands of draws: 0.2 ± 5 sigma.
        let sigma = (0.2 * 0.8 / r.truth.db_matches as f64).sqrt();
        assert!((frac - 0.2).abs() < 5.0 * sigma, "{frac}");
        let q = r.truth.query_points.iter().filter(|p| p.is_none()).count();
        assert_eq!(q, r.truth.query_outliers);
    }

    #[test]
    fn noise_seed_isolates_scene() {
        let b = generate_scene(&spec()).unwrap();
        let n1 = NoiseSpec {
            pixel_sigma: 1.0,
            seed: Some(1),
            ..NoiseSpec::default()
        };
        let n2 = NoiseSpec { seed: Some(2), ..n1.clone() };
        let r1 = render_matches(&b, &b.spec.sampling, &n1).unwrap();
        let r2 = render_matches(&b, &b.spec.sampling, &n2).unwrap();
        assert_ne!(r1.matches, r2.matches);
        assert_eq!(r1.marks, r2.marks);
        assert_eq!(render_matches(&b, &b.spec.sampling, &n1).unwrap(), r1);
    }

    #[test]
    fn gps_noise_moves_tags() {
        let b = generate_scene(&spec()).unwrap();
        let exact = render_matches(&b, &b.spec.sampling, &NoiseSpec::default()).unwrap();
        for (p, t) in exact.panoramas.iter().zip(&b.panos) {
            let e = crate::geodesy::geodetic_to_enu(&b.spec.origin, &p.geodetic);
            assert!((e - t.center).norm() < 1e-6);
        }
        let noisy = render_matches(
            &b,
            &b.spec.sampling,
            &NoiseSpec {
                gps_sigma_m: 2.0,
                ..NoiseSpec::default()
            },
        )
        .unwrap();
        assert_ne!(noisy.panoramas, exact.panoramas);
    }
}
