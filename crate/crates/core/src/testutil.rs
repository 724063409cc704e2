//! Shared fixtures for unit tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project, slot_rotation, Rotation, SamplingConfig, Vec3, ViewPose};
use crate::sfm::{view_id, Observation, Point3D, Reconstruction, ScaleState, View};

/// Panoramas along a street with points on both sides; every pose and point is exact.
pub fn pano_scene(n_panos: usize, cfg: &SamplingConfig, seed: u64) -> Reconstruction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = cfg.intrinsics();
    let t = cfg.views_per_pano;
    let mut views = Vec::new();
    for p in 0..n_panos {
        let heading = rng.random_range(-0.2..0.2);
        let center = Vec3::new(p as f64 * 4.0, rng.random_range(-0.5..0.5), 2.5);
        for j in 0..t {
            let rot = Rotation::about_z(heading).compose(&slot_rotation(t, j));
            views.push(View {
                id: view_id(&format!("p{p}"), j),
                pose: ViewPose::new(rot, center).with_pano(format!("p{p}"), j),
                intrinsics_id: "db".into(),
                registered: true,
            });
        }
    }
    let extent = n_panos as f64 * 4.0;
    let mut points = BTreeMap::new();
    let mut next = 0u64;
    while points.len() < 150 * n_panos {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let xyz = Vec3::new(
            rng.random_range(-10.0..extent + 10.0),
            side * rng.random_range(6.0..15.0),
            rng.random_range(0.0..8.0),
        );
        let obs: Vec<Observation> = views
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let px = project(&intr, &v.pose, &xyz).ok()?;
                intr.contains(&px).then_some(Observation { view: i, pixel: px })
            })
            .collect();
        if obs.len() >= 2 {
            points.insert(
                next,
                Point3D {
                    xyz,
                    road_mark: false,
                    observations: obs,
                },
            );
        }
        next += 1;
    }
    Reconstruction {
        views,
        intrinsics: [("db".to_string(), intr)].into(),
        points,
        scale_state: ScaleState::Arbitrary,
        views_per_pano: t,
        enu_origin: None,
    }
}
