//! Scoring an estimated query camera against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GroundTruthBundle, RenderedDataset};
use crate::geometry::Vec2;
use crate::groundplane::GroundMark;
use crate::traffic::ImageTrack;
use crate::geodesy::{ecef_to_enu, enu_to_ecef, GeodeticCoord};
use crate::geometry::{CameraIntrinsics, Mat3, Rotation, Vec3, ViewPose, INTRINSIC_NAMES};
use crate::groundplane::{distance_error_stats, measure_ground_distance, DistanceErrorStats, PlaneModel};
use crate::traffic::{lift_track, trap_speed, SpeedTrap};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedError {
    pub track_id: String,
    pub estimated_mps: f64,
    pub true_mps: f64,
    pub error_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Relative error per intrinsic parameter in percent, in `INTRINSIC_NAMES` order.
    pub intrinsics_pct: Vec<(String, f64)>,
    pub rotation_deg: f64,
    pub center_m: f64,
    pub distances: Option<DistanceErrorStats>,
    /// Marks whose pixels could not be cast onto the plane.
    pub failed_marks: usize,
    pub speeds: Vec<SpeedError>,
}

impl EvaluationReport {
    pub fn intrinsic_pct(&self, name: &str) -> Option<f64> {
        self.intrinsics_pct.iter().find(|(n, _)| n == name).map(|x| x.1)
    }

    pub fn max_focal_pct(&self) -> f64 {
        self.intrinsic_pct("fx").unwrap_or(f64::NAN).max(self.intrinsic_pct("fy").unwrap_or(f64::NAN))
    }
}

/// Rigid map from the scene ENU frame into the ENU frame anchored at `frame_origin`.
pub fn scene_to_frame(scene_origin: &GeodeticCoord, frame_origin: &GeodeticCoord) -> (Rotation, Vec3) {
    let map = |x: Vec3| ecef_to_enu(frame_origin, &enu_to_ecef(scene_origin, &x));
    let t = map(Vec3::zeros());
    let m = Mat3::from_columns(&[map(Vec3::x()) - t, map(Vec3::y()) - t, map(Vec3::z()) - t]);
    (Rotation::from_matrix_unchecked(m).renormalized(), t)
}

fn rel_pct(est: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if est == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (est - truth).abs() / truth.abs() * 100.0
    }
}

/// What the query camera observed: marks, vehicle tracks, and the trap in pixels.
#[derive(Clone, Copy, Debug)]
pub struct Observables<'a> {
    pub marks: &'a [GroundMark],
    pub tracks: &'a [ImageTrack],
    pub trap_pixels: Option<(Vec2, Vec2)>,
}

impl RenderedDataset {
    pub fn observables(&self) -> Observables<'_> {
        Observables {
            marks: &self.marks,
            tracks: &self.tracks,
            trap_pixels: Some(self.trap_pixels),
        }
    }
}

/// Compares an estimate expressed in the metric ENU frame at `frame_origin` with the truth.
///
/// Estimates in an up-to-scale frame (`frame_origin == None`) are rejected.
pub fn evaluate(
    bundle: &GroundTruthBundle,
    observed: Observables<'_>,
    intrinsics: &CameraIntrinsics,
    pose: &ViewPose,
    plane: Option<&PlaneModel>,
    frame_origin: Option<&GeodeticCoord>,
) -> Result<EvaluationReport> {
    let origin = frame_origin.ok_or_else(|| {
        Error::validation("estimate is in an arbitrary-scale frame; georegister before evaluating")
    })?;
    let (r, t) = scene_to_frame(&bundle.spec.origin, origin);
    let true_rot = r.compose(&bundle.query_pose.rotation);
    let true_center = r.rotate(&bundle.query_pose.center) + t;

    let intrinsics_pct = INTRINSIC_NAMES
        .iter()
        .zip(intrinsics.as_array().iter().zip(bundle.query_intrinsics.as_array()))
        .map(|(n, (e, g))| (n.to_string(), rel_pct(*e, g)))
        .collect();

    let mut distances = None;
    let mut failed_marks = 0;
    let mut speeds = Vec::new();
    if let Some(plane) = plane {
        let mut est = Vec::new();
        let mut gt = Vec::new();
        for m in observed.marks {
            let Some(g) = m.gt_distance_m else { continue };
            match measure_ground_distance(intrinsics, pose, plane, &m.pixel_a, &m.pixel_b) {
                Ok(d) if d > 0.0 => {
                    est.push(d);
                    gt.push(g);
                }
                _ => failed_marks += 1,
            }
        }
        if !est.is_empty() {
            distances = Some(distance_error_stats(&est, &gt)?);
        }

        let true_speed: BTreeMap<&str, f64> = bundle
            .vehicles
            .iter()
            .map(|v| (v.track.track_id.as_str(), v.speed_mps))
            .collect();
        let trap = observed
            .trap_pixels
            .and_then(|(pa, pb)| SpeedTrap::from_pixels(intrinsics, pose, plane, &pa, &pb).ok());
        if let Some(trap) = trap {
            for track in observed.tracks {
                let Ok((ground, _)) = lift_track(intrinsics, pose, plane, track) else {
                    continue;
                };
                for c in trap_speed(&ground, &trap) {
                    let Some(&truth) = true_speed.get(track.track_id.as_str()) else {
                        continue;
                    };
                    speeds.push(SpeedError {
                        track_id: track.track_id.clone(),
                        estimated_mps: c.speed_mps,
                        true_mps: truth,
                        error_pct: rel_pct(c.speed_mps, truth),
                    });
                }
            }
        }
    }

    Ok(EvaluationReport {
        intrinsics_pct,
        rotation_deg: pose.rotation.angle_to(&true_rot).to_degrees(),
        center_m: (pose.center - true_center).norm(),
        distances,
        failed_marks,
        speeds,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, render_matches, NoiseSpec, SceneSpec};
    use super::*;

    fn scene() -> (GroundTruthBundle, RenderedDataset) {
        let b = generate_scene(&SceneSpec {
            n_panos: 4,
            n_points: 200,
            seed: 5,
            ..SceneSpec::default()
        })
        .unwrap();
        let r = render_matches(&b, &b.spec.sampling, &NoiseSpec::default()).unwrap();
        (b, r)
    }

    #[test]
    fn truth_scores_zero() {
        let (b, r) = scene();
        let e = evaluate(&b, r.observables(), &b.query_intrinsics, &b.query_pose, Some(&b.plane), Some(&b.spec.origin)).unwrap();
        assert!(e.intrinsics_pct.iter().all(|(_, v)| *v < 1e-12));
        assert!(e.rotation_deg < 1e-6 && e.center_m < 1e-6, "{} {}", e.rotation_deg, e.center_m);
        let d = e.distances.unwrap();
        assert!(d.max_pct < 1e-6, "{}", d.max_pct);
        assert_eq!(e.failed_marks, 0);
        assert!(!e.speeds.is_empty());
        assert!(e.speeds.iter().all(|s| s.error_pct < 1e-6));
    }

    #[test]
    fn focal_error_is_reported() {
        let (b, r) = scene();
        let mut k = b.query_intrinsics;
        k.fx *= 1.02;
        let e = evaluate(&b, r.observables(), &k, &b.query_pose, None, Some(&b.spec.origin)).unwrap();
        assert!((e.intrinsic_pct("fx").unwrap() - 2.0).abs() < 1e-9);
        assert!(e.intrinsic_pct("fy").unwrap() < 1e-12);
    }

    #[test]
    fn shifted_origin_maps_truth() {
        let (b, r) = scene();
        let o = b.spec.origin;
        let shifted = GeodeticCoord::new(o.lat_deg + 0.001, o.lon_deg - 0.002, o.alt_m + 3.0);
        let (rot, t) = scene_to_frame(&o, &shifted);
        let pose = ViewPose::new(rot.compose(&b.query_pose.rotation), rot.rotate(&b.query_pose.center) + t);
        let e = evaluate(&b, r.observables(), &b.query_intrinsics, &pose, None, Some(&shifted)).unwrap();
        assert!(e.rotation_deg < 1e-9 && e.center_m < 1e-6);
    }

    #[test]
    fn arbitrary_frame_is_rejected() {
        let (b, r) = scene();
        assert!(matches!(
            evaluate(&b, r.observables(), &b.query_intrinsics, &b.query_pose, None, None),
            Err(Error::Validation(_))
        ));
    }
}
