//! Road plane fitting, ray-plane metrology, and distance error statistics.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_to_world_ray, CameraIntrinsics, Vec2, Vec3, ViewPose};
use crate::ransac::{ransac, RansacOptions};
use crate::{Error, Result};

/// Plane `normal · x + offset = 0` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub offset: f64,
}

impl PlaneModel {
    /// Normalizes and orients the normal upward (`normal.z >= 0`).
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 1e-12) || !offset.is_finite() {
            return Err(Error::degenerate("plane normal has zero length"));
        }
        Ok(PlaneModel {
            normal: normal / n,
            offset: offset / n,
        }
        .canonical())
    }

    pub fn horizontal(height: f64) -> Self {
        PlaneModel {
            normal: Vec3::z(),
            offset: -height,
        }
    }

    /// Flips the sign so the normal points up; vertical planes use the first nonzero component.
    pub fn canonical(self) -> Self {
        let key = if self.normal.z != 0.0 {
            self.normal.z
        } else if self.normal.y != 0.0 {
            self.normal.y
        } else {
            self.normal.x
        };
        if key < 0.0 {
            PlaneModel {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }

    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.normal.dot(x) + self.offset
    }

    /// Closest point on the plane.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        x - self.normal * self.signed_distance(x)
    }

    pub fn through_points(a: &Vec3, b: &Vec3, c: &Vec3) -> Result<Self> {
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        if !(n.norm() > 1e-9 * scale) {
            return Err(Error::degenerate("collinear plane sample"));
        }
        let n = n.normalize();
        Self::new(n, -n.dot(a))
    }

    /// Total least squares fit: centroid plus the smallest-eigenvalue direction of the scatter.
    pub fn least_squares(points: &[Vec3]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::degenerate(format!("plane fit needs >= 3 points, got {}", points.len())));
        }
        let c = points.iter().sum::<Vec3>() / points.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if !(mid > 1e-12 * max) || !(max > 0.0) {
            return Err(Error::degenerate("points are collinear or coincident"));
        }
        let n: Vec3 = eig.eigenvectors.column(order[0]).into();
        Self::new(n, -n.dot(&c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFitOptions {
    pub threshold_m: f64,
    pub confidence: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PlaneFitOptions {
    fn default() -> Self {
        PlaneFitOptions {
            threshold_m: 0.05,
            confidence: 0.9999,
            max_iter: 5000,
            seed: 0,
        }
    }
}

/// RANSAC plane fit over road-mark points followed by a least-squares refit on inliers.
///
/// Without labels the points at or below the median height are used. The returned
/// mask indexes `points`; unlabelled points are never inliers.
pub fn fit_plane_ransac(
    points: &[Vec3],
    labels: Option<&[bool]>,
    opts: &PlaneFitOptions,
) -> Result<(PlaneModel, Vec<bool>)> {
    let candidates: Vec<usize> = match labels {
        Some(l) => {
            if l.len() != points.len() {
                return Err(Error::validation(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
            (0..points.len()).filter(|&i| l[i]).collect()
        }
        None => {
            log::warn!("no road-mark labels; fitting the plane to points below the median height");
            let mut z: Vec<f64> = points.iter().map(|p| p.z).collect();
            z.sort_by(f64::total_cmp);
            let med = lower_median(&z);
            (0..points.len()).filter(|&i| points[i].z <= med).collect()
        }
    };
    if candidates.len() < 3 {
        return Err(Error::degenerate(format!(
            "plane fit needs >= 3 labelled points, got {}",
            candidates.len()
        )));
    }
    let pts: Vec<Vec3> = candidates.iter().map(|&i| points[i]).collect();
    let ropts = RansacOptions {
        confidence: opts.confidence,
        max_iter: opts.max_iter,
        min_iter: 50.min(opts.max_iter),
        seed: opts.seed,
    };
    let res = ransac(
        pts.len(),
        3,
        &ropts,
        |s| PlaneModel::through_points(&pts[s[0]], &pts[s[1]], &pts[s[2]]).into_iter().collect(),
        |m: &PlaneModel, i| m.signed_distance(&pts[i]).abs() < opts.threshold_m,
    )
    .ok_or_else(|| Error::degenerate("all plane samples are collinear"))?;
    let inl: Vec<Vec3> = pts
        .iter()
        .zip(&res.inliers)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let plane = PlaneModel::least_squares(&inl)?;
    let mut mask = vec![false; points.len()];
    for (k, &i) in candidates.iter().enumerate() {
        mask[i] = res.inliers[k];
    }
    Ok((plane, mask))
}

/// Intersects `origin + t·dir` (t > 0) with the plane.
pub fn ray_plane_intersect(origin: &Vec3, dir: &Vec3, plane: &PlaneModel) -> Result<Vec3> {
    let denom = plane.normal.dot(dir);
    if !(denom.abs() > 1e-9) {
        return Err(Error::NoIntersection(format!("ray direction parallel to plane (n·d = {denom:e})")));
    }
    let t = -plane.signed_distance(origin) / denom;
    if !(t > 0.0) {
        return Err(Error::BehindCamera { t });
    }
    Ok(plane.project(&(origin + dir * t)))
}

/// Ground point seen at `pixel`.
pub fn pixel_to_ground(intr: &CameraIntrinsics, pose: &ViewPose, plane: &PlaneModel, pixel: &Vec2) -> Result<Vec3> {
    let (o, d) = pixel_to_world_ray(intr, pose, pixel)?;
    ray_plane_intersect(&o, &d, plane)
}

/// Metric distance on the plane between the ground points under two pixels.
pub fn measure_ground_distance(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    plane: &PlaneModel,
    pixel_a: &Vec2,
    pixel_b: &Vec2,
) -> Result<f64> {
    let tag = |which: &'static str| {
        move |e: Error| Error::Pixel {
            which,
            source: Box::new(e),
        }
    };
    let a = pixel_to_ground(intr, pose, plane, pixel_a).map_err(tag("a"))?;
    let b = pixel_to_ground(intr, pose, plane, pixel_b).map_err(tag("b"))?;
    Ok((a - b).norm())
}

/// Pixel pair on the road with an optional measured distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundMark {
    pub pixel_a: Vec2,
    pub pixel_b: Vec2,
    pub gt_distance_m: Option<f64>,
}

/// Normalized distance errors `|d̂ − d| / d̂`, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceErrorStats {
    pub errors_pct: Vec<f64>,
    pub max_pct: f64,
    pub median_pct: f64,
    pub rmse_pct: f64,
}

fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

pub fn distance_error_stats(estimates: &[f64], ground_truth: &[f64]) -> Result<DistanceErrorStats> {
    if estimates.len() != ground_truth.len() || estimates.is_empty() {
        return Err(Error::validation(format!(
            "need equal nonempty lists, got {} estimates and {} ground truths",
            estimates.len(),
            ground_truth.len()
        )));
    }
    let mut errors_pct = Vec::with_capacity(estimates.len());
    for (i, (&e, &g)) in estimates.iter().zip(ground_truth).enumerate() {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::validation(format!("ground truth {i} is not positive: {g}")));
        }
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::validation(format!("estimate {i} is not positive: {e}")));
        }
        errors_pct.push((e - g).abs() / e * 100.0);
    }
    let mut sorted = errors_pct.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(DistanceErrorStats {
        max_pct: *sorted.last().unwrap(),
        median_pct: lower_median(&sorted),
        rmse_pct: (sorted.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
        errors_pct,
    })
}

/// Statistics pooled over all cameras, and per camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledDistanceStats {
    pub pooled: DistanceErrorStats,
    pub per_camera: Vec<(String, DistanceErrorStats)>,
}

pub fn pooled_distance_stats(groups: &[(String, Vec<f64>, Vec<f64>)]) -> Result<PooledDistanceStats> {
    let mut all_e = Vec::new();
    let mut all_g = Vec::new();
    let mut per_camera = Vec::with_capacity(groups.len());
    for (name, e, g) in groups {
        per_camera.push((name.clone(), distance_error_stats(e, g)?));
        all_e.extend_from_slice(e);
        all_g.extend_from_slice(g);
    }
    Ok(PooledDistanceStats {
        pooled: distance_error_stats(&all_e, &all_g)?,
        per_camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_horizontal_plane() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new((i % 7) as f64, (i / 7) as f64 * 1.3, 0.0))
            .collect();
        let (p, mask) = fit_plane_ransac(&pts, Some(&vec![true; 50]), &PlaneFitOptions::default()).unwrap();
        assert!((p.normal - Vec3::z()).norm() < 1e-12);
        assert!(p.offset.abs() < 1e-12);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn ransac_recovers_plane_under_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
        let d = -1.7;
        let truth = PlaneModel::new(n, d).unwrap();
        let u = n.cross(&Vec3::x()).normalize();
        let v = n.cross(&u);
        let mut pts = Vec::new();
        for _ in 0..700 {
            pts.push(-n * d + u * rng.random_range(-20.0..20.0) + v * rng.random_range(-20.0..20.0));
        }
        // Outliers are drawn away from the plane by more than the threshold.
        while pts.len() < 1000 {
            let p = Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-10.0..10.0),
            );
            if truth.signed_distance(&p).abs() > 0.1 {
                pts.push(p);
            }
        }
        let (p, mask) = fit_plane_ransac(&pts, Some(&vec![true; 1000]), &PlaneFitOptions::default()).unwrap();
        assert!(p.normal.angle(&truth.normal) < 1e-6);
        assert!((p.offset - truth.offset).abs() < 1e-9);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 700);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        assert!(matches!(
            fit_plane_ransac(&pts, Some(&vec![true; 20]), &PlaneFitOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn unlabelled_fit_uses_low_points() {
        let mut pts: Vec<Vec3> = (0..30).map(|i| Vec3::new((i % 6) as f64, (i / 6) as f64, 0.0)).collect();
        pts.extend((0..30).map(|i| Vec3::new((i % 6) as f64, 10.0, 1.0 + (i / 6) as f64)));
        let (p, mask) = fit_plane_ransac(&pts, None, &PlaneFitOptions::default()).unwrap();
        assert!((p.normal - Vec3::z()).norm() < 1e-12);
        assert!(mask[30..].iter().all(|&m| !m));
    }

    #[test]
    fn straight_down_ray() {
        let x = ray_plane_intersect(&Vec3::new(0.0, 0.0, 10.0), &-Vec3::z(), &PlaneModel::horizontal(0.0)).unwrap();
        assert_eq!(x, Vec3::zeros());
        assert!(matches!(
            ray_plane_intersect(&Vec3::new(0.0, 0.0, 10.0), &Vec3::x(), &PlaneModel::horizontal(0.0)),
            Err(Error::NoIntersection(_))
        ));
        assert!(matches!(
            ray_plane_intersect(&Vec3::new(0.0, 0.0, 10.0), &Vec3::z(), &PlaneModel::horizontal(0.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    fn down_camera() -> (CameraIntrinsics, ViewPose) {
        // Camera z along world −z, camera x along world x.
        let r = Rotation::about_x(std::f64::consts::PI);
        (
            CameraIntrinsics::pinhole(1000.0, 1000.0, 640.0, 360.0, 1280, 720),
            ViewPose::new(r, Vec3::new(0.0, 0.0, 10.0)),
        )
    }

    #[test]
    fn similar_triangles_distance() {
        let (k, pose) = down_camera();
        let d = measure_ground_distance(
            &k,
            &pose,
            &PlaneModel::horizontal(0.0),
            &Vec2::new(590.0, 360.0),
            &Vec2::new(690.0, 360.0),
        )
        .unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_above_horizon_is_behind_camera() {
        let k = CameraIntrinsics::pinhole(1000.0, 1000.0, 640.0, 360.0, 1280, 720);
        // Level camera looking along world x.
        let pose = ViewPose::new(crate::geometry::camera_to_pano_base(), Vec3::new(0.0, 0.0, 5.0));
        let err = measure_ground_distance(
            &k,
            &pose,
            &PlaneModel::horizontal(0.0),
            &Vec2::new(640.0, 600.0),
            &Vec2::new(640.0, 100.0),
        )
        .unwrap_err();
        match err {
            Error::Pixel { which, source } => {
                assert_eq!(which, "b");
                assert!(matches!(*source, Error::BehindCamera { .. }));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn error_stats_formula() {
        let s = distance_error_stats(&[10.0], &[9.5]).unwrap();
        assert!((s.errors_pct[0] - 5.0).abs() < 1e-12);
        let z = distance_error_stats(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((z.max_pct, z.median_pct, z.rmse_pct), (0.0, 0.0, 0.0));
        let even = distance_error_stats(&[1.0; 4], &[0.99, 0.98, 0.97, 0.96]).unwrap();
        assert!((even.median_pct - 2.0).abs() < 1e-9);
        assert!(distance_error_stats(&[1.0], &[1.0, 2.0]).is_err());
        assert!(distance_error_stats(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn pooling_reports_both() {
        let g = vec![
            ("a".to_string(), vec![10.0], vec![9.0]),
            ("b".to_string(), vec![10.0, 10.0], vec![10.0, 10.0]),
        ];
        let p = pooled_distance_stats(&g).unwrap();
        assert_eq!(p.per_camera.len(), 2);
        assert!((p.per_camera[0].1.max_pct - 10.0).abs() < 1e-12);
        assert_eq!(p.pooled.errors_pct.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn intersection_lies_on_plane(
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in 0.1..1.0f64, d in -20.0..20.0f64,
            ox in -50.0..50.0f64, oy in -50.0..50.0f64, oz in -50.0..50.0f64,
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
        ) {
            let plane = PlaneModel::new(Vec3::new(nx, ny, nz), d).unwrap();
            let o = Vec3::new(ox, oy, oz);
            let dir = Vec3::new(dx, dy, dz);
            prop_assume!(dir.norm() > 1e-3);
            if let Ok(x) = ray_plane_intersect(&o, &dir.normalize(), &plane) {
                prop_assert!(plane.signed_distance(&x).abs() < 1e-12 * (1.0 + x.norm()));
            }
        }

        #[test]
        fn canonicalization_is_idempotent(nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in -1.0..1.0f64, d in -5.0..5.0f64) {
            prop_assume!(Vec3::new(nx, ny, nz).norm() > 1e-3);
            let p = PlaneModel::new(Vec3::new(nx, ny, nz), d).unwrap();
            prop_assert_eq!(p.canonical(), p);
            prop_assert!(p.normal.z >= 0.0);
            let x = p.project(&Vec3::new(1.0, 2.0, 3.0));
            let q = PlaneModel { normal: -p.normal, offset: -p.offset }.canonical();
            prop_assert!(q.signed_distance(&x).abs() < 1e-12);
        }

        #[test]
        fn distance_is_symmetric(ua in 0.0..1280.0f64, va in 0.0..720.0f64, ub in 0.0..1280.0f64, vb in 0.0..720.0f64) {
            let (k, pose) = down_camera();
            let plane = PlaneModel::horizontal(0.0);
            let (a, b) = (Vec2::new(ua, va), Vec2::new(ub, vb));
            let ab = measure_ground_distance(&k, &pose, &plane, &a, &b).unwrap();
            let ba = measure_ground_distance(&k, &pose, &plane, &b, &a).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn fronto_parallel_distance_is_linear(
            h in 1.0..50.0f64, f in 200.0..3000.0f64, ux in 200.0..1000.0f64, vy in 200.0..500.0f64,
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, s in 0.1..3.0f64,
        ) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            let k = CameraIntrinsics::pinhole(f, f, 640.0, 360.0, 1280, 720);
            let pose = ViewPose::new(Rotation::about_x(std::f64::consts::PI), Vec3::new(0.0, 0.0, h));
            let plane = PlaneModel::horizontal(0.0);
            let a = Vec2::new(ux, vy);
            let step = Vec2::new(dx, dy) * 50.0;
            let d1 = measure_ground_distance(&k, &pose, &plane, &a, &(a + step)).unwrap();
            let d2 = measure_ground_distance(&k, &pose, &plane, &a, &(a + step * s)).unwrap();
            prop_assert!((d2 - s * d1).abs() <= 1e-9 * d2.max(1e-12));
        }
    }
}
