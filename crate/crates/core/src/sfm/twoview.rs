//! Two-view geometry: essential matrix estimation and relative pose.

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::geometry::{undistort_pixel, CameraIntrinsics, Rotation, Vec2, Vec3, ViewPose};
use crate::ransac::{ransac, RansacOptions};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoViewOptions {
    /// Sampson threshold in pixels.
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
    /// Median triangulation angle below which the pair counts as a pure rotation.
    pub min_median_angle_deg: f64,
    pub ransac: RansacOptions,
}

impl Default for TwoViewOptions {
    fn default() -> Self {
        TwoViewOptions {
            threshold_px: 1.0,
            min_inliers: 15,
            min_inlier_ratio: 0.5,
            min_median_angle_deg: 1.0,
            ransac: RansacOptions {
                max_iter: 2000,
                ..RansacOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoViewResult {
    /// Pose of the second view with the first at the origin; unit baseline.
    pub pose_b: ViewPose,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub median_angle_deg: f64,
}

/// `x_bᵀ E x_a = 0` for `X_b = R X_a + t`.
fn eight_point(xa: &[Vec3], xb: &[Vec3], idx: &[usize]) -> Option<Matrix3<f64>> {
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for &i in idx {
        let (a, b) = (xa[i], xb[i]);
        let row = SVector::<f64, 9>::from_column_slice(&[
            b.x * a.x,
            b.y * a.x,
            b.z * a.x,
            b.x * a.y,
            b.y * a.y,
            b.z * a.y,
            b.x * a.z,
            b.y * a.z,
            b.z * a.z,
        ]);
        ata += row * row.transpose();
    }
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let e = Matrix3::from_column_slice(eig.eigenvectors.column(k).as_slice());
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let e = u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)) * vt;
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Squared Sampson distance in normalized image units.
fn sampson(e: &Matrix3<f64>, a: &Vec3, b: &Vec3) -> f64 {
    let ea = e * a;
    let etb = e.transpose() * b;
    let num = b.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

/// The four `(R, t)` factorizations of an essential matrix.
fn decompose(e: &Matrix3<f64>) -> Vec<(Matrix3<f64>, Vec3)> {
    let svd = e.svd(true, true);
    let (mut u, mut vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    #[rustfmt::skip]
    let w = Matrix3::new(
        0.0, -1.0, 0.0,
        1.0, 0.0, 0.0,
        0.0, 0.0, 1.0,
    );
    let t: Vec3 = u.column(2).into();
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    vec![(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths of the midpoint triangulation in both cameras.
fn depths(r: &Matrix3<f64>, t: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    // X_b = R X_a + t with X_a = s a, X_b = u b: s R a − u b = −t.
    let ra = r * a;
    let m = nalgebra::Matrix3x2::from_columns(&[ra, -b]);
    let mtm = m.transpose() * m;
    match mtm.try_inverse() {
        Some(inv) => {
            let su = inv * (m.transpose() * (-t));
            (su.x, su.y)
        }
        None => (-1.0, -1.0),
    }
}

fn bearings(intr: &CameraIntrinsics, pixels: &[Vec2]) -> Result<Vec<Vec3>> {
    pixels
        .iter()
        .map(|p| undistort_pixel(intr, p).map(|n| Vec3::new(n.x, n.y, 1.0)))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rotation mapping bearings of view a to view b from two correspondences.
fn rotation_from_two(a1: &Vec3, a2: &Vec3, b1: &Vec3, b2: &Vec3) -> Option<Matrix3<f64>> {
    let frame = |p: &Vec3, q: &Vec3| -> Option<Matrix3<f64>> {
        let e1 = p.normalize();
        let n = p.cross(q);
        if n.norm() < 1e-12 {
            return None;
        }
        let e2 = n.normalize();
        Some(Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]))
    };
    Some(frame(b1, b2)? * frame(a1, a2)?.transpose())
}

/// Relative pose from correspondences between two views sharing `intr`.
pub fn bootstrap_two_view(
    pixels_a: &[Vec2],
    pixels_b: &[Vec2],
    intr: &CameraIntrinsics,
    opts: &TwoViewOptions,
) -> Result<TwoViewResult> {
    bootstrap_two_view_with(pixels_a, pixels_b, intr, intr, opts)
}

pub fn bootstrap_two_view_with(
    pixels_a: &[Vec2],
    pixels_b: &[Vec2],
    intr_a: &CameraIntrinsics,
    intr_b: &CameraIntrinsics,
    opts: &TwoViewOptions,
) -> Result<TwoViewResult> {
    let n = pixels_a.len();
    if n < 8 || pixels_b.len() != n {
        return Err(Error::degenerate(format!(
            "two-view bootstrap needs >= 8 correspondences, got {n}"
        )));
    }
    let xa = bearings(intr_a, pixels_a)?;
    let xb = bearings(intr_b, pixels_b)?;
    let f = 0.25 * (intr_a.fx + intr_a.fy + intr_b.fx + intr_b.fy);
    let thr = opts.threshold_px / f;
    let thr2 = thr * thr;
    let needed = opts.min_inliers.max((opts.min_inlier_ratio * n as f64).ceil() as usize);

    // A pure rotation explains most matches without any parallax.
    let ua: Vec<Vec3> = xa.iter().map(|v| v.normalize()).collect();
    let ub: Vec<Vec3> = xb.iter().map(|v| v.normalize()).collect();
    let rot = ransac(
        n,
        2,
        &opts.ransac,
        |s| rotation_from_two(&ua[s[0]], &ua[s[1]], &ub[s[0]], &ub[s[1]]).into_iter().collect(),
        |r, i| (r * ua[i]).angle(&ub[i]) < thr,
    );
    if let Some(rot) = rot {
        if rot.num_inliers >= needed {
            let angles = (0..n).map(|i| (rot.model * ua[i]).angle(&ub[i]).to_degrees()).collect();
            return Err(Error::RotationOnly {
                median_deg: median(angles),
            });
        }
    }

    let res = ransac(
        n,
        8,
        &opts.ransac,
        |s| eight_point(&xa, &xb, s).into_iter().collect(),
        |e, i| sampson(e, &xa[i], &xb[i]) < thr2,
    )
    .ok_or_else(|| Error::degenerate("essential matrix estimation failed"))?;
    let mut e = res.model;
    let mut inliers = res.inliers;
    // Refit on all inliers.
    let idx: Vec<usize> = (0..n).filter(|&i| inliers[i]).collect();
    if let Some(refit) = eight_point(&xa, &xb, &idx) {
        let refit_inliers: Vec<bool> = (0..n).map(|i| sampson(&refit, &xa[i], &xb[i]) < thr2).collect();
        if refit_inliers.iter().filter(|b| **b).count() >= idx.len() {
            e = refit;
            inliers = refit_inliers;
        }
    }
    let count = inliers.iter().filter(|b| **b).count();
    if count < needed {
        return Err(Error::degenerate(format!(
            "two-view bootstrap found {count} of {n} inliers (need {needed})"
        )));
    }

    let mut best: Option<(usize, Matrix3<f64>, Vec3)> = None;
    for (r, t) in decompose(&e) {
        let front = (0..n)
            .filter(|&i| inliers[i])
            .filter(|&i| {
                let (da, db) = depths(&r, &t, &xa[i], &xb[i]);
                da > 0.0 && db > 0.0
            })
            .count();
        if best.as_ref().is_none_or(|(c, _, _)| front > *c) {
            best = Some((front, r, t));
        }
    }
    let (_, r, t) = best.expect("four candidate poses");
    // Cheirality: points behind either camera are not inliers.
    for i in 0..n {
        if inliers[i] {
            let (da, db) = depths(&r, &t, &xa[i], &xb[i]);
            inliers[i] = da > 0.0 && db > 0.0;
        }
    }
    let count = inliers.iter().filter(|b| **b).count();
    if count < needed {
        return Err(Error::degenerate(format!(
            "two-view bootstrap kept {count} of {n} points in front of both cameras (need {needed})"
        )));
    }
    let angles: Vec<f64> = (0..n)
        .filter(|&i| inliers[i])
        .map(|i| (r * ua[i]).angle(&ub[i]).to_degrees())
        .collect();
    let med = median(angles);
    if med < opts.min_median_angle_deg {
        return Err(Error::RotationOnly { median_deg: med });
    }
    let rotation = Rotation::from_matrix(&r.transpose())?;
    let center = -(r.transpose() * t.normalize());
    Ok(TwoViewResult {
        pose_b: ViewPose::new(rotation, center),
        inliers,
        num_inliers: count,
        median_angle_deg: med,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, skew};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0, 1280, 720)
    }

    fn scene(rng: &mut ChaCha8Rng, pose_b: &ViewPose, n: usize) -> (Vec<Vec2>, Vec<Vec2>) {
        let k = intr();
        let a = ViewPose::identity();
        let (mut pa, mut pb) = (Vec::new(), Vec::new());
        while pa.len() < n {
            let x = Vec3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(4.0..12.0),
            );
            let (Ok(u), Ok(v)) = (project(&k, &a, &x), project(&k, pose_b, &x)) else {
                continue;
            };
            if k.contains(&u) && k.contains(&v) {
                pa.push(u);
                pb.push(v);
            }
        }
        (pa, pb)
    }

    fn true_pose() -> ViewPose {
        ViewPose::new(
            Rotation::exp(&Vec3::new(0.02, -0.1, 0.03)),
            Vec3::new(1.0, 0.1, 0.2),
        )
    }

    #[test]
    fn noiseless_pair_recovers_relative_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = true_pose();
        let (pa, pb) = scene(&mut rng, &truth, 100);
        let r = bootstrap_two_view(&pa, &pb, &intr(), &TwoViewOptions::default()).unwrap();
        assert_eq!(r.num_inliers, 100);
        assert!(r.pose_b.rotation.angle_to(&truth.rotation) < 1e-6);
        let dir_err = r.pose_b.center.angle(&truth.center.normalize());
        assert!(dir_err < 1e-6, "{dir_err}");
        assert!((r.pose_b.center.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_rotation_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = ViewPose::new(Rotation::exp(&Vec3::new(0.0, 0.2, 0.05)), Vec3::zeros());
        let (pa, pb) = scene(&mut rng, &truth, 80);
        assert!(matches!(
            bootstrap_two_view(&pa, &pb, &intr(), &TwoViewOptions::default()),
            Err(Error::RotationOnly { .. })
        ));
    }

    #[test]
    fn outliers_are_separated_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = true_pose();
        let k = intr();
        let (pa, mut pb) = scene(&mut rng, &truth, 140);
        // Epipolar geometry of the true pose, to keep generated outliers clearly off their lines.
        let r = truth.rotation.transpose_matrix();
        let t = -(r * truth.center);
        let e = skew(&t) * r;
        let mut outlier = vec![false; pa.len()];
        let mut replaced = 0;
        for i in 0..pa.len() {
            if replaced * 10 >= pa.len() * 3 {
                break;
            }
            if i % 3 != 0 {
                continue;
            }
            loop {
                let cand = Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
                let xa = k.pixel_to_normalized(&pa[i]);
                let xb = k.pixel_to_normalized(&cand);
                let d = sampson(&e, &Vec3::new(xa.x, xa.y, 1.0), &Vec3::new(xb.x, xb.y, 1.0)).sqrt() * 800.0;
                if d > 5.0 {
                    pb[i] = cand;
                    break;
                }
            }
            outlier[i] = true;
            replaced += 1;
        }
        let res = bootstrap_two_view(&pa, &pb, &k, &TwoViewOptions::default()).unwrap();
        for i in 0..pa.len() {
            assert_eq!(res.inliers[i], !outlier[i], "match {i}");
        }
    }

    #[test]
    fn too_few_inliers_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pa: Vec<Vec2> = (0..40)
            .map(|_| Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0)))
            .collect();
        let pb: Vec<Vec2> = (0..40)
            .map(|_| Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0)))
            .collect();
        assert!(matches!(
            bootstrap_two_view(&pa, &pb, &intr(), &TwoViewOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
